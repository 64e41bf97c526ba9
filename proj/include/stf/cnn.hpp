#ifndef STF_CNN_HPP
#define STF_CNN_HPP

// Small convolutional classifier over pooled response channels: valid convolutions,
// zero-padded max-pooling, fully connected output, softmax cross-entropy, SGD with
// momentum. Parameters are kept float32-representable so model files round-trip exactly.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stf/common.hpp"
#include "stf/filterbank.hpp"

namespace stf {

/// Dense channels x height x width tensor, row-major with width fastest.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int height, int width)
      : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, 0.0) {}

  std::size_t size() const noexcept { return data.size(); }
  double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Channel f holds the pooled map of filter f.
inline Tensor to_tensor(const ResponseStack& st) {
  const int n = st.n_filters();
  const int h = n ? static_cast<int>(st.pooled[0].rows()) : 0;
  const int w = n ? static_cast<int>(st.pooled[0].cols()) : 0;
  Tensor t(n, h, w);
  for (int f = 0; f < n; ++f)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(f, y, x) = st.pooled[f](y, x);
  return t;
}

/// Shifts the tensor by (dx, dy) pixels, filling vacated pixels with zero.
inline Tensor translate(const Tensor& in, int dx, int dy) {
  if (dx == 0 && dy == 0) return in;
  Tensor out(in.c, in.h, in.w);
  for (int ch = 0; ch < in.c; ++ch)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        const int sy = y - dy, sx = x - dx;
        if (sy >= 0 && sx >= 0 && sy < in.h && sx < in.w) out.at(ch, y, x) = in.at(ch, sy, sx);
      }
  return out;
}

enum class LayerKind { conv, maxpool, fully_connected };

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  int out = 0;     // output channels (conv) or units (fully_connected)
  int kernel = 1;
  int stride = 1;

  static LayerSpec conv(int out, int kernel, int stride = 1) { return {LayerKind::conv, out, kernel, stride}; }
  static LayerSpec maxpool(int kernel, int stride) { return {LayerKind::maxpool, 0, kernel, stride}; }
  static LayerSpec fc(int out) { return {LayerKind::fully_connected, out, 1, 1}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int epochs = 60;
  double weight_decay = 0.0;

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct CnnConfig {
  int input_channels = 1;
  int input_size = 1;  // square P x P maps
  std::vector<LayerSpec> layers;
  std::string activation = "relu";  // relu | tanh
  int n_classes = 2;
  OptimizerConfig optimizer;
  int augment_translation = 0;  // max |shift| in pixels
  std::uint64_t seed = 0;

  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

struct Shape {
  int c, h, w;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Output shape of every layer; throws DimensionError if the stack does not chain
/// from the input to an n_classes fully connected output.
inline std::vector<Shape> shape_chain(const CnnConfig& cfg) {
  if (cfg.input_channels < 1 || cfg.input_size < 1) throw DimensionError("input shape must be positive");
  if (cfg.n_classes < 1) throw DimensionError("n_classes must be >= 1");
  if (cfg.activation != "relu" && cfg.activation != "tanh")
    throw PreconditionError("unknown activation '" + cfg.activation + "'");
  std::vector<Shape> shapes;
  Shape s{cfg.input_channels, cfg.input_size, cfg.input_size};
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const std::string where = "layer " + std::to_string(i + 1) + ": ";
    switch (l.kind) {
      case LayerKind::conv:
        if (l.out < 1 || l.kernel < 1 || l.stride < 1) throw DimensionError(where + "bad conv parameters");
        if (s.h < l.kernel || s.w < l.kernel)
          throw DimensionError(where + "conv kernel " + std::to_string(l.kernel) + " exceeds " +
                               std::to_string(s.h) + "x" + std::to_string(s.w) + " map");
        s = {l.out, (s.h - l.kernel) / l.stride + 1, (s.w - l.kernel) / l.stride + 1};
        break;
      case LayerKind::maxpool: {
        if (l.kernel < 1 || l.stride < 1) throw DimensionError(where + "bad pool parameters");
        auto pooled = [&](int n) { return n <= l.kernel ? 1 : (n - l.kernel + l.stride - 1) / l.stride + 1; };
        s = {s.c, pooled(s.h), pooled(s.w)};
        break;
      }
      case LayerKind::fully_connected:
        if (l.out < 1) throw DimensionError(where + "bad fully connected width");
        s = {l.out, 1, 1};
        break;
    }
    shapes.push_back(s);
  }
  if (cfg.layers.empty() || cfg.layers.back().kind != LayerKind::fully_connected)
    throw DimensionError("the last layer must be fully connected");
  if (shapes.back().c != cfg.n_classes)
    throw DimensionError("final layer width " + std::to_string(shapes.back().c) + " differs from n_classes " +
                         std::to_string(cfg.n_classes));
  for (std::size_t i = 0; i + 1 < cfg.layers.size(); ++i)
    if (cfg.layers[i].kind == LayerKind::fully_connected && cfg.layers[i + 1].kind != LayerKind::fully_connected)
      throw DimensionError("spatial layers cannot follow a fully connected layer");
  return shapes;
}

/// conv3x3/60, pool2, conv3x3/150, pool2, conv3x3/300, pool2, conv3x3/600, FC.
/// Chains to a 1x1 map for 31x31 inputs.
inline CnnConfig reference_architecture(int n_filters, int n_classes, int input_size = 31) {
  CnnConfig cfg;
  cfg.input_channels = n_filters;
  cfg.input_size = input_size;
  cfg.n_classes = n_classes;
  cfg.layers = {LayerSpec::conv(60, 3), LayerSpec::maxpool(2, 2), LayerSpec::conv(150, 3), LayerSpec::maxpool(2, 2),
                LayerSpec::conv(300, 3), LayerSpec::maxpool(2, 2), LayerSpec::conv(600, 3), LayerSpec::fc(n_classes)};
  shape_chain(cfg);
  return cfg;
}

/// Reduced stack for small pooled maps (7x7 from a 32x32 sensor): conv3x3/32, pool2,
/// conv3x3/64, FC.
inline CnnConfig desk_architecture(int n_filters, int n_classes, int input_size = 7) {
  CnnConfig cfg;
  cfg.input_channels = n_filters;
  cfg.input_size = input_size;
  cfg.n_classes = n_classes;
  cfg.layers = {LayerSpec::conv(32, 3), LayerSpec::maxpool(2, 2), LayerSpec::conv(64, 3), LayerSpec::fc(n_classes)};
  shape_chain(cfg);
  return cfg;
}

/// The table stack where it fits the input size, the reduced stack from 7x7 up, and
/// for tinier maps a single conv (or nothing) ahead of the classifier.
inline CnnConfig architecture_for(int n_filters, int n_classes, int input_size) {
  if (input_size >= 31) return reference_architecture(n_filters, n_classes, input_size);
  if (input_size >= 7) return desk_architecture(n_filters, n_classes, input_size);
  CnnConfig cfg;
  cfg.input_channels = n_filters;
  cfg.input_size = input_size;
  cfg.n_classes = n_classes;
  if (input_size >= 3) cfg.layers.push_back(LayerSpec::conv(32, 3));
  cfg.layers.push_back(LayerSpec::fc(n_classes));
  shape_chain(cfg);
  return cfg;
}

struct LayerParams {
  std::vector<double> weights;  // conv: [out][in][ky][kx]; fc: [out][in]
  std::vector<double> bias;
};

struct CnnModel {
  CnnConfig config;
  std::vector<LayerParams> params;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.weights.size() + p.bias.size();
    return n;
  }
  friend bool operator==(const CnnModel& l, const CnnModel& r) {
    if (!(l.config == r.config) || l.params.size() != r.params.size()) return false;
    for (std::size_t i = 0; i < l.params.size(); ++i)
      if (l.params[i].weights != r.params[i].weights || l.params[i].bias != r.params[i].bias) return false;
    return true;
  }
};

inline double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void quantize(CnnModel& m) {
  for (auto& p : m.params) {
    for (auto& v : p.weights) v = to_float32(v);
    for (auto& v : p.bias) v = to_float32(v);
  }
}

/// He-normal weights, zero biases, seeded by config.seed.
inline CnnModel init_model(const CnnConfig& cfg) {
  const auto shapes = shape_chain(cfg);
  CnnModel m;
  m.config = cfg;
  std::mt19937_64 rng(derive_seed(cfg.seed, 0xc0));
  Shape in{cfg.input_channels, cfg.input_size, cfg.input_size};
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    LayerParams p;
    std::size_t fan_in = 0;
    if (l.kind == LayerKind::conv) {
      fan_in = static_cast<std::size_t>(in.c) * l.kernel * l.kernel;
      p.weights.resize(static_cast<std::size_t>(l.out) * fan_in);
      p.bias.assign(l.out, 0.0);
    } else if (l.kind == LayerKind::fully_connected) {
      fan_in = static_cast<std::size_t>(in.c) * in.h * in.w;
      p.weights.resize(static_cast<std::size_t>(l.out) * fan_in);
      p.bias.assign(l.out, 0.0);
    }
    if (fan_in > 0) {
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& w : p.weights) w = normal(rng);
    }
    m.params.push_back(std::move(p));
    in = shapes[i];
  }
  quantize(m);
  return m;
}

/// Per-layer intermediate values retained for back-propagation.
struct ForwardCache {
  std::vector<Tensor> inputs;       // input of each layer
  std::vector<Tensor> outputs;      // output of each layer (post-activation)
  std::vector<std::vector<int>> argmax;  // pool layers: flat input index of each output, -1 = padding
  std::vector<double> logits;
};

namespace detail {

inline bool activates(const CnnConfig& cfg, std::size_t layer) {
  const LayerKind k = cfg.layers[layer].kind;
  return k == LayerKind::conv || (k == LayerKind::fully_connected && layer + 1 < cfg.layers.size());
}

inline double activate(const std::string& act, double v) { return act == "relu" ? std::max(0.0, v) : std::tanh(v); }

// Derivative expressed through the activation output.
inline double activation_grad(const std::string& act, double out) {
  return act == "relu" ? (out > 0 ? 1.0 : 0.0) : 1.0 - out * out;
}

}  // namespace detail

inline std::vector<double> forward(const CnnModel& m, const Tensor& input, ForwardCache* cache = nullptr) {
  const CnnConfig& cfg = m.config;
  if (input.c != cfg.input_channels || input.h != cfg.input_size || input.w != cfg.input_size)
    throw DimensionError("input " + std::to_string(input.c) + "x" + std::to_string(input.h) + "x" +
                         std::to_string(input.w) + " does not match model input " +
                         std::to_string(cfg.input_channels) + "x" + std::to_string(cfg.input_size) + "x" +
                         std::to_string(cfg.input_size));
  const auto shapes = shape_chain(cfg);
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
    cache->argmax.assign(cfg.layers.size(), {});
  }
  Tensor cur = input;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerSpec& l = cfg.layers[i];
    const Shape s = shapes[i];
    Tensor out(s.c, s.h, s.w);
    if (l.kind == LayerKind::conv) {
      const auto& p = m.params[i];
      const int kk = l.kernel;
      for (int o = 0; o < s.c; ++o) {
        for (int y = 0; y < s.h; ++y) {
          for (int x = 0; x < s.w; ++x) {
            double acc = p.bias[o];
            for (int ic = 0; ic < cur.c; ++ic) {
              const double* wp = &p.weights[((static_cast<std::size_t>(o) * cur.c + ic) * kk) * kk];
              for (int ky = 0; ky < kk; ++ky) {
                const double* row = &cur.data[(static_cast<std::size_t>(ic) * cur.h + y * l.stride + ky) * cur.w +
                                              x * l.stride];
                for (int kx = 0; kx < kk; ++kx) acc += wp[ky * kk + kx] * row[kx];
              }
            }
            out.at(o, y, x) = acc;
          }
        }
      }
    } else if (l.kind == LayerKind::maxpool) {
      std::vector<int> arg(out.size(), -1);
      for (int ch = 0; ch < s.c; ++ch)
        for (int py = 0; py < s.h; ++py)
          for (int px = 0; px < s.w; ++px) {
            double best = -std::numeric_limits<double>::infinity();
            int best_idx = -1;
            for (int ky = 0; ky < l.kernel; ++ky)
              for (int kx = 0; kx < l.kernel; ++kx) {
                const int y = py * l.stride + ky, x = px * l.stride + kx;
                const bool inside = y < cur.h && x < cur.w;
                const double v = inside ? cur.at(ch, y, x) : 0.0;
                if (v > best) {
                  best = v;
                  best_idx = inside ? static_cast<int>((static_cast<std::size_t>(ch) * cur.h + y) * cur.w + x) : -1;
                }
              }
            out.at(ch, py, px) = best;
            arg[(static_cast<std::size_t>(ch) * s.h + py) * s.w + px] = best_idx;
          }
      if (cache) cache->argmax[i] = std::move(arg);
    } else {
      const auto& p = m.params[i];
      const std::size_t n_in = cur.size();
      for (int o = 0; o < s.c; ++o) {
        double acc = p.bias[o];
        const double* wp = &p.weights[static_cast<std::size_t>(o) * n_in];
        for (std::size_t j = 0; j < n_in; ++j) acc += wp[j] * cur.data[j];
        out.data[o] = acc;
      }
    }
    if (detail::activates(cfg, i))
      for (auto& v : out.data) v = detail::activate(cfg.activation, v);
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->outputs.push_back(out);
    }
    cur = std::move(out);
  }
  if (cache) cache->logits = cur.data;
  return cur.data;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0;
  for (auto& v : p) z += (v = std::exp(v - mx));
  for (auto& v : p) v /= z;
  return p;
}

struct Gradients {
  std::vector<LayerParams> layers;

  static Gradients zeros_like(const CnnModel& m) {
    Gradients g;
    for (const auto& p : m.params)
      g.layers.push_back({std::vector<double>(p.weights.size(), 0.0), std::vector<double>(p.bias.size(), 0.0)});
    return g;
  }
};

/// Softmax cross-entropy loss of one example; accumulates its gradient into grad.
inline double loss_and_gradient(const CnnModel& m, const Tensor& input, int label, Gradients& grad,
                                int* predicted = nullptr) {
  const CnnConfig& cfg = m.config;
  if (label < 0 || label >= cfg.n_classes) throw PreconditionError("label out of range");
  ForwardCache cache;
  forward(m, input, &cache);
  const auto prob = softmax(cache.logits);
  if (predicted) *predicted = static_cast<int>(std::max_element(prob.begin(), prob.end()) - prob.begin());
  const double loss = -std::log(std::max(prob[label], std::numeric_limits<double>::min()));

  Tensor d_out(static_cast<int>(prob.size()), 1, 1);
  for (std::size_t c = 0; c < prob.size(); ++c) d_out.data[c] = prob[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);

  for (std::size_t li = cfg.layers.size(); li-- > 0;) {
    const LayerSpec& l = cfg.layers[li];
    const Tensor& in = cache.inputs[li];
    const Tensor& out = cache.outputs[li];
    if (detail::activates(cfg, li))
      for (std::size_t j = 0; j < d_out.size(); ++j) d_out.data[j] *= detail::activation_grad(cfg.activation, out.data[j]);
    Tensor d_in(in.c, in.h, in.w);
    if (l.kind == LayerKind::conv) {
      const auto& p = m.params[li];
      auto& g = grad.layers[li];
      const int kk = l.kernel;
      for (int o = 0; o < out.c; ++o)
        for (int y = 0; y < out.h; ++y)
          for (int x = 0; x < out.w; ++x) {
            const double d = d_out.at(o, y, x);
            if (d == 0) continue;
            g.bias[o] += d;
            for (int ic = 0; ic < in.c; ++ic) {
              const std::size_t wbase = ((static_cast<std::size_t>(o) * in.c + ic) * kk) * kk;
              for (int ky = 0; ky < kk; ++ky)
                for (int kx = 0; kx < kk; ++kx) {
                  const int iy = y * l.stride + ky, ix = x * l.stride + kx;
                  g.weights[wbase + ky * kk + kx] += d * in.at(ic, iy, ix);
                  d_in.at(ic, iy, ix) += d * p.weights[wbase + ky * kk + kx];
                }
            }
          }
    } else if (l.kind == LayerKind::maxpool) {
      const auto& arg = cache.argmax[li];
      for (std::size_t j = 0; j < d_out.size(); ++j)
        if (arg[j] >= 0) d_in.data[arg[j]] += d_out.data[j];
    } else {
      const auto& p = m.params[li];
      auto& g = grad.layers[li];
      const std::size_t n_in = in.size();
      for (int o = 0; o < out.c; ++o) {
        const double d = d_out.data[o];
        g.bias[o] += d;
        const std::size_t base = static_cast<std::size_t>(o) * n_in;
        for (std::size_t j = 0; j < n_in; ++j) {
          g.weights[base + j] += d * in.data[j];
          d_in.data[j] += d * p.weights[base + j];
        }
      }
    }
    d_out = std::move(d_in);
  }
  return loss;
}

struct Prediction {
  int label = 0;
  std::vector<double> scores;  // softmax probabilities
};

/// Argmax of the softmax scores; ties go to the lowest class index.
inline Prediction predict(const CnnModel& m, const Tensor& input) {
  Prediction p;
  p.scores = softmax(forward(m, input));
  p.label = static_cast<int>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
  return p;
}

struct EpochStats {
  int epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct LabeledTensor {
  Tensor input;
  int label = 0;
};

struct TrainResult {
  CnnModel model;
  std::vector<EpochStats> history;
};

inline double accuracy(const CnnModel& m, std::span<const LabeledTensor> data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t ok = 0;
  for (const auto& ex : data) ok += predict(m, ex.input).label == ex.label;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

/// Mini-batch SGD with momentum on softmax cross-entropy, using model.config's
/// optimizer and augmentation settings. Deterministic for a fixed config.seed.
inline TrainResult train(const CnnModel& init, std::span<const LabeledTensor> data,
                         std::span<const LabeledTensor> validation = {}) {
  const CnnConfig& cfg = init.config;
  const OptimizerConfig& opt = cfg.optimizer;
  if (opt.epochs < 0 || opt.batch_size < 1) throw PreconditionError("bad optimizer configuration");
  TrainResult res{init, {}};
  if (opt.epochs == 0) return res;
  if (data.empty()) throw InsufficientDataError("no training examples");
  {
    std::vector<bool> seen(cfg.n_classes, false);
    for (const auto& ex : data) {
      if (ex.label < 0 || ex.label >= cfg.n_classes) throw PreconditionError("training label out of range");
      seen[ex.label] = true;
    }
    for (int c = 0; c < cfg.n_classes; ++c)
      if (!seen[c]) throw InsufficientDataError("class " + std::to_string(c) + " has no training examples");
  }
  CnnModel& m = res.model;
  Gradients velocity = Gradients::zeros_like(m);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const int shift = cfg.augment_translation;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(cfg.seed, 0xe0000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<int> jitter(-shift, shift);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      Gradients grad = Gradients::zeros_like(m);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = data[order[b]];
        const Tensor in = shift > 0 ? translate(ex.input, jitter(rng), jitter(rng)) : ex.input;
        int guess = -1;
        const double loss = loss_and_gradient(m, in, ex.label, grad, &guess);
        if (!std::isfinite(loss)) throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
        loss_sum += loss;
        correct += guess == ex.label;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t li = 0; li < m.params.size(); ++li) {
        auto update = [&](std::vector<double>& w, std::vector<double>& g, std::vector<double>& v, bool decay) {
          for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] * scale + (decay ? opt.weight_decay * w[j] : 0.0);
            v[j] = opt.momentum * v[j] - opt.learning_rate * gj;
            w[j] += v[j];
          }
        };
        update(m.params[li].weights, grad.layers[li].weights, velocity.layers[li].weights, true);
        update(m.params[li].bias, grad.layers[li].bias, velocity.layers[li].bias, false);
      }
    }
    EpochStats st;
    st.epoch = epoch + 1;
    st.loss = loss_sum / static_cast<double>(data.size());
    st.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!std::isfinite(st.loss)) throw DivergenceError("training loss became non-finite");
    for (const auto& p : m.params)
      for (double w : p.weights)
        if (!std::isfinite(w)) throw DivergenceError("weights became non-finite");
    if (!validation.empty()) {
      CnnModel snapshot = m;
      quantize(snapshot);
      st.val_accuracy = accuracy(snapshot, validation);
    }
    res.history.push_back(st);
  }
  quantize(m);
  return res;
}

inline void write_history_csv(std::ostream& out, std::span<const EpochStats> history) {
  out << "epoch,loss,train_acc,val_acc\n";
  char buf[128];
  for (const auto& h : history) {
    if (std::isnan(h.val_accuracy))
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,\n", h.epoch, h.loss, h.train_accuracy);
    else
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", h.epoch, h.loss, h.train_accuracy, h.val_accuracy);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Model file: uint32 LE header length, JSON config header, then every parameter as
// little-endian float32 (per layer: weights then biases).

inline nlohmann::json config_to_json(const CnnConfig& c) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : c.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        layers.push_back({{"type", "conv"}, {"out", l.out}, {"kernel", l.kernel}, {"stride", l.stride}});
        break;
      case LayerKind::maxpool:
        layers.push_back({{"type", "maxpool"}, {"kernel", l.kernel}, {"stride", l.stride}});
        break;
      case LayerKind::fully_connected:
        layers.push_back({{"type", "fc"}, {"out", l.out}});
        break;
    }
  }
  return {{"input_channels", c.input_channels},
          {"input_size", c.input_size},
          {"layers", layers},
          {"activation", c.activation},
          {"n_classes", c.n_classes},
          {"optimizer",
           {{"learning_rate", c.optimizer.learning_rate},
            {"momentum", c.optimizer.momentum},
            {"batch_size", c.optimizer.batch_size},
            {"epochs", c.optimizer.epochs},
            {"weight_decay", c.optimizer.weight_decay}}},
          {"augment_translation", c.augment_translation},
          {"seed", c.seed}};
}

inline CnnConfig config_from_json(const nlohmann::json& j) {
  CnnConfig c;
  try {
    c.input_channels = j.at("input_channels").get<int>();
    c.input_size = j.at("input_size").get<int>();
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv")
        c.layers.push_back(LayerSpec::conv(l.at("out").get<int>(), l.at("kernel").get<int>(), l.value("stride", 1)));
      else if (type == "maxpool")
        c.layers.push_back(LayerSpec::maxpool(l.at("kernel").get<int>(), l.at("stride").get<int>()));
      else if (type == "fc")
        c.layers.push_back(LayerSpec::fc(l.at("out").get<int>()));
      else
        throw Error("unknown layer type '" + type + "'");
    }
    c.activation = j.value("activation", std::string("relu"));
    c.n_classes = j.at("n_classes").get<int>();
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
      c.optimizer.batch_size = o.value("batch_size", c.optimizer.batch_size);
      c.optimizer.epochs = o.value("epochs", c.optimizer.epochs);
      c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    }
    c.augment_translation = j.value("augment_translation", 0);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed CNN config: ") + e.what());
  }
  shape_chain(c);
  return c;
}

inline void save_model(const CnnModel& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model " + path.string());
  nlohmann::json header{{"format", "stf-cnn"}, {"version", 1}, {"config", config_to_json(m.config)},
                        {"n_params", m.parameter_count()}};
  const std::string h = header.dump();
  detail::put_u32_le(out, static_cast<std::uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& p : m.params) {
    for (double v : p.weights) detail::put_f32_le(out, static_cast<float>(v));
    for (double v : p.bias) detail::put_f32_le(out, static_cast<float>(v));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline CnnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model " + path.string());
  const std::uint32_t len = detail::get_u32_le(in);
  std::string h(len, '\0');
  if (!in.read(h.data(), len)) throw IoError("truncated model header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(h);
  } catch (const nlohmann::json::exception& e) {
    throw Error("model " + path.string() + ": " + e.what());
  }
  CnnModel m = init_model(config_from_json(header.at("config")));
  if (header.at("n_params").get<std::size_t>() != m.parameter_count())
    throw DimensionError("model parameter count does not match its configuration");
  for (auto& p : m.params) {
    for (auto& v : p.weights) v = detail::get_f32_le(in);
    for (auto& v : p.bias) v = detail::get_f32_le(in);
  }
  return m;
}

}  // namespace stf

#endif  // STF_CNN_HPP
