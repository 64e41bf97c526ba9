#ifndef STF_PIPELINE_HPP
#define STF_PIPELINE_HPP

// End-to-end orchestration: filter learning on training ROIs, normalisation on training
// slabs, CNN training on one example per slab, and windowed winner-take-all evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stf/cnn.hpp"
#include "stf/common.hpp"
#include "stf/events.hpp"
#include "stf/filterbank.hpp"
#include "stf/filterlearn.hpp"
#include "stf/perturb.hpp"
#include "stf/voxel.hpp"

namespace stf {

struct EvalProtocol {
  std::int64_t t_total = 1'000'000;
  std::int64_t window = 100'000;
  std::int64_t overlap = 50'000;

  /// 100 ms windows, 90 ms overlap, 200 ms per decision.
  static EvalProtocol gesture() { return {200'000, 100'000, 90'000}; }
  /// 100 ms windows, 50% overlap, 2 s per decision.
  static EvalProtocol action() { return {2'000'000, 100'000, 50'000}; }
};

/// Filter count used with the gesture preset unless one is given explicitly.
inline constexpr int kGestureFilterCount = 12;

struct PipelineParams {
  int a = 6;
  int k = 25;
  std::int64_t t_vox = 4000;
  int n_filters = 9;
  double alpha = 0.2;
  FilterMethod method = FilterMethod::sfa;
  std::size_t m_samples = 30000;
  double ridge = 1e-6;
  std::int64_t time_scale = 0;  // neighbour-metric divisor for dt; 0 means t_vox
  int pool = 4;
  OptimizerConfig optimizer;
  int augment_translation = 1;
  std::string activation = "relu";
  EvalProtocol protocol;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  std::int64_t neighbour_scale() const { return time_scale > 0 ? time_scale : t_vox; }
  std::int64_t window() const { return static_cast<std::int64_t>(k) * t_vox; }
};

inline nlohmann::json params_to_json(const PipelineParams& p) {
  return {{"a", p.a},
          {"k", p.k},
          {"t_vox", p.t_vox},
          {"n_filters", p.n_filters},
          {"alpha", p.alpha},
          {"method", to_string(p.method)},
          {"m_samples", p.m_samples},
          {"ridge", p.ridge},
          {"time_scale", p.time_scale},
          {"pool", p.pool},
          {"cnn",
           {{"learning_rate", p.optimizer.learning_rate},
            {"momentum", p.optimizer.momentum},
            {"batch_size", p.optimizer.batch_size},
            {"epochs", p.optimizer.epochs},
            {"weight_decay", p.optimizer.weight_decay},
            {"augment_translation", p.augment_translation},
            {"activation", p.activation}}},
          {"protocol", {{"t_total", p.protocol.t_total}, {"window", p.protocol.window}, {"overlap", p.protocol.overlap}}},
          {"seed", p.seed}};
}

/// Overlays the keys present in j onto p; absent keys keep their current values.
inline void params_from_json(const nlohmann::json& j, PipelineParams& p) {
  try {
    p.a = j.value("a", p.a);
    p.k = j.value("k", p.k);
    p.t_vox = j.value("t_vox", p.t_vox);
    p.n_filters = j.value("n_filters", p.n_filters);
    p.alpha = j.value("alpha", p.alpha);
    if (j.contains("method")) p.method = filter_method_from_string(j["method"].get<std::string>());
    p.m_samples = j.value("m_samples", p.m_samples);
    p.ridge = j.value("ridge", p.ridge);
    p.time_scale = j.value("time_scale", p.time_scale);
    p.pool = j.value("pool", p.pool);
    if (j.contains("cnn")) {
      const auto& c = j["cnn"];
      p.optimizer.learning_rate = c.value("learning_rate", p.optimizer.learning_rate);
      p.optimizer.momentum = c.value("momentum", p.optimizer.momentum);
      p.optimizer.batch_size = c.value("batch_size", p.optimizer.batch_size);
      p.optimizer.epochs = c.value("epochs", p.optimizer.epochs);
      p.optimizer.weight_decay = c.value("weight_decay", p.optimizer.weight_decay);
      p.augment_translation = c.value("augment_translation", p.augment_translation);
      p.activation = c.value("activation", p.activation);
    }
    if (j.contains("protocol")) {
      const auto& e = j["protocol"];
      p.protocol.t_total = e.value("t_total", p.protocol.t_total);
      p.protocol.window = e.value("window", p.protocol.window);
      p.protocol.overlap = e.value("overlap", p.protocol.overlap);
    }
    p.seed = j.value("seed", p.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed pipeline parameters: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Data access

inline std::vector<EventRecording> load_split(const DatasetManifest& m, Split split, unsigned threads = 1) {
  const auto entries = m.entries(split);
  std::vector<EventRecording> recs(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) { recs[i] = m.load(*entries[i]); });
  return recs;
}

/// k-bin slabs of a recording's grid anchored at its first event.
inline std::vector<VoxelGrid> recording_slabs(const EventRecording& rec, std::int64_t t_vox, int k) {
  return partition_slabs(voxelize(rec, t_vox), k);
}

/// ROIs drawn from every recording, m split as evenly as possible across them.
inline std::vector<RoiSample> sample_training_rois(std::span<const EventRecording> recs, const PipelineParams& p) {
  if (recs.empty()) throw InsufficientDataError("no training recordings");
  const std::size_t n = recs.size();
  std::vector<std::vector<RoiSample>> per(n);
  parallel_for(n, p.threads, [&](std::size_t i) {
    const std::size_t mi = p.m_samples / n + (i < p.m_samples % n ? 1 : 0);
    if (mi > 0) per[i] = sample_rois(recs[i], p.a, p.k, p.t_vox, mi, derive_seed(p.seed, 0x10000 + i));
  });
  std::vector<RoiSample> out;
  out.reserve(p.m_samples);
  for (auto& v : per)
    for (auto& s : v) out.push_back(std::move(s));
  return out;
}

inline FilterBank learn_bank(std::span<const EventRecording> train_recs, const PipelineParams& p, int n_filters) {
  FilterBank bank;
  if (p.method == FilterMethod::random) {
    bank = learn_random(p.a, p.k, p.t_vox, n_filters, derive_seed(p.seed, 0x7a));
  } else {
    const auto samples = sample_training_rois(train_recs, p);
    if (p.method == FilterMethod::sfa)
      bank = learn_sfa(samples, n_filters, p.neighbour_scale(), SfaOptions{p.ridge}, p.threads);
    else
      bank = learn_pca(samples, n_filters);
  }
  bank.alpha = p.alpha;
  return bank;
}

/// Normalisation statistics from every slab of the training recordings.
inline FilterBank fit_bank_normalization(const FilterBank& bank, std::span<const EventRecording> train_recs,
                                         unsigned threads) {
  std::vector<std::vector<Moments>> per(train_recs.size());
  parallel_for(train_recs.size(), threads, [&](std::size_t i) {
    std::vector<Moments> acc(bank.n_filters());
    for (const auto& slab : recording_slabs(train_recs[i], bank.t_vox, bank.k)) {
      const auto m = response_moments(slab, bank);
      for (std::size_t f = 0; f < m.size(); ++f) acc[f].merge(m[f]);
    }
    per[i] = std::move(acc);
  });
  std::vector<Moments> total(bank.n_filters());
  for (const auto& acc : per)
    for (std::size_t f = 0; f < acc.size(); ++f) total[f].merge(acc[f]);
  if (total.empty() || total[0].n == 0) throw InsufficientDataError("training recordings contain no complete slab");
  FilterBank out = bank;
  out.norm_mean.resize(total.size());
  out.norm_std.resize(total.size());
  for (std::size_t f = 0; f < total.size(); ++f) {
    out.norm_mean[f] = total[f].mean;
    out.norm_std[f] = std::max(std::sqrt(total[f].variance()), kStdFloor);
  }
  return out;
}

/// One labelled CNN example per slab; empty slabs are kept.
inline std::vector<LabeledTensor> slab_examples(const FilterBank& bank, std::span<const EventRecording> recs,
                                                int pool, unsigned threads) {
  std::vector<std::vector<LabeledTensor>> per(recs.size());
  parallel_for(recs.size(), threads, [&](std::size_t i) {
    const auto slabs = recording_slabs(recs[i], bank.t_vox, bank.k);
    for (std::size_t s = 0; s < slabs.size(); ++s)
      per[i].push_back({to_tensor(respond(slabs[s], bank, pool, static_cast<int>(s))), recs[i].label.value_or(0)});
  });
  std::vector<LabeledTensor> out;
  for (auto& v : per)
    for (auto& e : v) out.push_back(std::move(e));
  return out;
}

inline int pooled_size(const FilterBank& bank, SensorGeometry g, int pool) {
  const int side = std::min(g.width, g.height) - bank.a + 1;
  return (side + pool - 1) / pool;
}

struct TrainedSystem {
  FilterBank bank;
  CnnModel model;
  std::vector<EpochStats> history;
};

inline CnnConfig classifier_config(const FilterBank& bank, const DatasetManifest& m, const PipelineParams& p) {
  if (m.geometry.width != m.geometry.height) throw GeometryError("the classifier expects a square sensor");
  CnnConfig cfg = architecture_for(bank.n_filters(), static_cast<int>(m.categories.size()),
                                   pooled_size(bank, m.geometry, p.pool));
  cfg.activation = p.activation;
  cfg.optimizer = p.optimizer;
  cfg.augment_translation = p.augment_translation;
  cfg.seed = derive_seed(p.seed, 0xcc);
  return cfg;
}

/// Fits normalisation and trains the classifier for an already-learned bank.
inline TrainedSystem train_classifier(const FilterBank& bank, const DatasetManifest& m,
                                      std::span<const EventRecording> train_recs, const PipelineParams& p) {
  TrainedSystem sys;
  sys.bank = fit_bank_normalization(bank, train_recs, p.threads);
  const auto examples = slab_examples(sys.bank, train_recs, p.pool, p.threads);
  auto result = train(init_model(classifier_config(sys.bank, m, p)), examples);
  sys.model = std::move(result.model);
  sys.history = std::move(result.history);
  return sys;
}

/// Learns the bank from training ROIs, fits normalisation on training slabs and trains
/// the classifier. Only the train split is ever read.
inline TrainedSystem run_training(const DatasetManifest& m, const PipelineParams& p) {
  if (m.count(Split::train) == 0) throw InsufficientDataError("manifest has an empty train split");
  const auto train_recs = load_split(m, Split::train, p.threads);
  return train_classifier(learn_bank(train_recs, p, p.n_filters), m, train_recs, p);
}

// ---------------------------------------------------------------------------
// Windowed decisions

struct DurationDecision {
  int label = 0;
  std::vector<int> window_labels;
  std::vector<double> summed_scores;
};

/// Number of windows of length `window` at stride window - overlap that fit in `span`.
inline std::size_t window_count(std::int64_t span, std::int64_t window, std::int64_t overlap) {
  if (span < window) return 0;
  return static_cast<std::size_t>((span - window) / (window - overlap)) + 1;
}

/// Majority vote; ties go to the largest summed score, then to the lowest index.
inline int aggregate_votes(std::span<const int> labels, std::span<const double> summed_scores) {
  std::vector<int> votes(summed_scores.size(), 0);
  for (int l : labels) ++votes.at(l);
  int best = 0;
  for (int c = 1; c < static_cast<int>(votes.size()); ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && summed_scores[c] > summed_scores[best])) best = c;
  }
  return best;
}

/// Slides windows from the first event at stride window - overlap until t_total is
/// covered; windows reaching past the last event are not used.
inline DurationDecision classify_duration(const EventRecording& rec, const FilterBank& bank, const CnnModel& model,
                                          const EvalProtocol& proto, int pool) {
  if (proto.window != static_cast<std::int64_t>(bank.k) * bank.t_vox)
    throw PreconditionError("window must equal k * t_vox");
  if (proto.overlap < 0 || proto.overlap >= proto.window) throw PreconditionError("overlap must be in [0, window)");
  if (proto.t_total < proto.window) throw PreconditionError("t_total must be at least one window");
  const std::int64_t t0 = rec.t_first();
  const std::int64_t available = rec.empty() ? 0 : rec.t_last() + 1 - t0;
  const std::size_t n = window_count(std::min(proto.t_total, available), proto.window, proto.overlap);
  if (n == 0) throw InsufficientDataError("recording shorter than one decision window");
  DurationDecision d;
  d.summed_scores.assign(model.config.n_classes, 0.0);
  const std::int64_t stride = proto.window - proto.overlap;
  for (std::size_t w = 0; w < n; ++w) {
    const std::int64_t start = t0 + static_cast<std::int64_t>(w) * stride;
    const VoxelGrid slab = voxelize_window(rec.events, rec.geometry, bank.t_vox, start, bank.k);
    const Prediction p = predict(model, to_tensor(respond(slab, bank, pool, static_cast<int>(w))));
    d.window_labels.push_back(p.label);
    for (std::size_t c = 0; c < p.scores.size(); ++c) d.summed_scores[c] += p.scores[c];
  }
  d.label = aggregate_votes(d.window_labels, d.summed_scores);
  return d;
}

// ---------------------------------------------------------------------------
// Metrics

struct RecordingDecision {
  std::string path;
  int truth = 0;
  int predicted = 0;
  std::size_t windows = 0;
};

struct EvalReport {
  std::vector<std::string> categories;
  double overall_accuracy = 0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  std::vector<RecordingDecision> decisions;
  nlohmann::json config;
};

/// Accuracy = trace/total; F1 = 2PR/(P+R), defined 0 when P+R = 0.
inline void compute_metrics(EvalReport& r) {
  const std::size_t n = r.confusion.size();
  std::size_t total = 0, diag = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      total += r.confusion[i][j];
      if (i == j) diag += r.confusion[i][j];
    }
  r.overall_accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
  r.per_class_f1.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t tp = r.confusion[c][c], row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    const double precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    r.per_class_f1[c] = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
}

using RecordingTransform = std::function<EventRecording(const EventRecording&, std::size_t index)>;

inline EvalReport evaluate(const DatasetManifest& m, const FilterBank& bank, const CnnModel& model,
                           const EvalProtocol& proto, int pool, unsigned threads = 1,
                           const RecordingTransform& transform = nullptr) {
  const auto entries = m.entries(Split::test);
  if (entries.empty()) throw InsufficientDataError("manifest has an empty test split");
  EvalReport r;
  r.categories = m.categories;
  r.decisions.resize(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    EventRecording rec = m.load(*entries[i]);
    if (transform) rec = transform(rec, i);
    const DurationDecision d = classify_duration(rec, bank, model, proto, pool);
    r.decisions[i] = {entries[i]->path.generic_string(), entries[i]->label, d.label, d.window_labels.size()};
  });
  const std::size_t n = m.categories.size();
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (const auto& d : r.decisions) ++r.confusion.at(d.truth).at(d.predicted);
  compute_metrics(r);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& d : r.decisions)
    decisions.push_back(
        {{"path", d.path}, {"truth", d.truth}, {"predicted", d.predicted}, {"windows", d.windows}});
  nlohmann::json f1 = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class_f1.size(); ++c) f1[r.categories.at(c)] = r.per_class_f1[c];
  return {{"overall_accuracy", r.overall_accuracy}, {"per_class_f1", f1}, {"categories", r.categories},
          {"confusion", r.confusion}, {"decisions", decisions}, {"config", r.config}};
}

inline void write_confusion_csv(std::ostream& out, const EvalReport& r) {
  out << "truth\\predicted";
  for (const auto& c : r.categories) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < r.confusion.size(); ++i) {
    out << r.categories.at(i);
    for (auto v : r.confusion[i]) out << ',' << v;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Experiments

struct FilterCountRow {
  int n_filters;
  EvalReport report;
};

/// Learns one bank with max(counts) filters and retrains the classifier for each
/// prefix of it.
inline std::vector<FilterCountRow> sweep_filter_count(const DatasetManifest& m, const PipelineParams& p,
                                                      std::span<const int> counts) {
  if (counts.empty()) throw PreconditionError("no filter counts given");
  const int max_count = *std::max_element(counts.begin(), counts.end());
  const auto train_recs = load_split(m, Split::train, p.threads);
  if (train_recs.empty()) throw InsufficientDataError("manifest has an empty train split");
  const FilterBank full = learn_bank(train_recs, p, max_count);
  std::vector<FilterCountRow> rows;
  for (int n : counts) {
    const TrainedSystem sys = train_classifier(truncate(full, n), m, train_recs, p);
    EvalReport rep = evaluate(m, sys.bank, sys.model, p.protocol, p.pool, p.threads);
    rep.config = params_to_json(p);
    rep.config["n_filters"] = n;
    rows.push_back({n, std::move(rep)});
  }
  return rows;
}

struct NoiseRow {
  std::int64_t t_delta;
  EvalReport report;
};

/// Re-evaluates fixed trained artifacts on test recordings with jittered timestamps.
inline std::vector<NoiseRow> sweep_timestamp_noise(const DatasetManifest& m, const FilterBank& bank,
                                                   const CnnModel& model, std::span<const std::int64_t> deltas,
                                                   const EvalProtocol& proto, int pool, std::uint64_t seed,
                                                   unsigned threads = 1) {
  std::vector<NoiseRow> rows;
  for (std::int64_t delta : deltas) {
    if (delta < 0) throw PreconditionError("noise deltas must be non-negative");
    auto jitter = [&](const EventRecording& rec, std::size_t i) {
      return add_timestamp_noise(rec, delta, derive_seed(seed, (static_cast<std::uint64_t>(delta) << 20) ^ i));
    };
    rows.push_back({delta, evaluate(m, bank, model, proto, pool, threads, jitter)});
  }
  return rows;
}

struct MethodRow {
  FilterMethod method;
  EvalReport report;
};

inline std::vector<MethodRow> compare_methods(const DatasetManifest& m, const PipelineParams& p,
                                              std::span<const FilterMethod> methods) {
  std::vector<MethodRow> rows;
  for (FilterMethod method : methods) {
    PipelineParams q = p;
    q.method = method;
    const TrainedSystem sys = run_training(m, q);
    EvalReport rep = evaluate(m, sys.bank, sys.model, q.protocol, q.pool, q.threads);
    rep.config = params_to_json(q);
    rows.push_back({method, std::move(rep)});
  }
  return rows;
}

/// Per filter: mean over samples of (w'X - w'X')^2 / var(w'X), where X' drops a random
/// removal_fraction of the patch's events.
inline std::vector<double> mean_response_shift(const FilterBank& bank, std::span<const RoiSample> samples,
                                               double removal_fraction, std::uint64_t seed) {
  if (removal_fraction < 0 || removal_fraction > 1) throw PreconditionError("removal_fraction must be in [0, 1]");
  detail::check_samples(samples);
  if (static_cast<int>(samples.front().values.size()) != bank.filters.cols())
    throw DimensionError("filter and sample dimensions differ");
  const Eigen::Index m = static_cast<Eigen::Index>(samples.size()), d = bank.filters.cols();
  Eigen::MatrixXd X(m, d), Xr(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const RoiSample& s = samples[i];
    std::vector<Event> kept = s.events;
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::shuffle(kept.begin(), kept.end(), rng);
    const auto n_remove = static_cast<std::size_t>(std::llround(removal_fraction * static_cast<double>(kept.size())));
    kept.resize(kept.size() - n_remove);
    const auto reduced = count_into_roi(s, kept);
    for (Eigen::Index j = 0; j < d; ++j) {
      X(i, j) = s.values[j];
      Xr(i, j) = reduced[j];
    }
  }
  const Eigen::MatrixXd r = X * bank.filters.transpose();
  const Eigen::MatrixXd rr = Xr * bank.filters.transpose();
  std::vector<double> out(bank.n_filters());
  for (int f = 0; f < bank.n_filters(); ++f) {
    const double mean = r.col(f).mean();
    const double var = (r.col(f).array() - mean).square().sum() / static_cast<double>(m);
    if (!(var > 0)) throw Error("filter " + std::to_string(f) + " has constant responses (zero variance)");
    out[f] = (r.col(f) - rr.col(f)).squaredNorm() / static_cast<double>(m) / var;
  }
  return out;
}

}  // namespace stf

#endif  // STF_PIPELINE_HPP
