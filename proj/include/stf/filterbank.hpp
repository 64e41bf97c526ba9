#ifndef STF_FILTERBANK_HPP
#define STF_FILTERBANK_HPP

// Applying a learned bank to k-bin slabs: valid 3-D cross-correlation, per-filter
// standardisation with training statistics, tanh(alpha * x) and spatial max-pooling.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stf/common.hpp"
#include "stf/filterlearn.hpp"
#include "stf/voxel.hpp"

namespace stf {

using Image = Eigen::MatrixXd;  // rows = y, cols = x

/// One raw response image per filter, each (H - a + 1) x (W - a + 1).
inline std::vector<Image> convolve_slab(const VoxelGrid& slab, const FilterBank& bank) {
  if (slab.n_bins != bank.k) throw DimensionError("slab depth differs from filter depth");
  if (slab.height < bank.a || slab.width < bank.a) throw DimensionError("slab smaller than filter footprint");
  if (bank.filters.cols() != bank.dim()) throw DimensionError("filter length differs from a*a*k");
  const int a = bank.a, oh = slab.height - a + 1, ow = slab.width - a + 1;
  const int n = bank.n_filters();
  std::vector<Image> out(n, Image::Zero(oh, ow));
  // Scatter each occupied voxel into every output position whose window covers it.
  for (int y = 0; y < slab.height; ++y) {
    for (int x = 0; x < slab.width; ++x) {
      for (int b = 0; b < slab.n_bins; ++b) {
        const std::uint32_t c = slab.at(y, x, b);
        if (c == 0) continue;
        const double count = c;
        for (int dy = std::max(0, y - oh + 1); dy <= std::min(a - 1, y); ++dy) {
          for (int dx = std::max(0, x - ow + 1); dx <= std::min(a - 1, x); ++dx) {
            const std::size_t idx = roi_index(a, dx, dy, b);
            for (int f = 0; f < n; ++f) out[f](y - dy, x - dx) += count * bank.filters(f, idx);
          }
        }
      }
    }
  }
  return out;
}

/// Streaming mean/variance with an exact merge (Chan et al. pairwise update).
struct Moments {
  double n = 0;
  double mean = 0;
  double m2 = 0;

  void add(double v) {
    n += 1;
    const double d = v - mean;
    mean += d / n;
    m2 += d * (v - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0) return;
    const double total = n + o.n;
    const double d = o.mean - mean;
    mean += d * o.n / total;
    m2 += o.m2 + d * d * n * o.n / total;
    n = total;
  }
  double variance() const { return n > 0 ? m2 / n : 0.0; }
};

inline constexpr double kStdFloor = 1e-12;

inline std::vector<Moments> response_moments(const VoxelGrid& slab, const FilterBank& bank) {
  const auto images = convolve_slab(slab, bank);
  std::vector<Moments> m(images.size());
  for (std::size_t f = 0; f < images.size(); ++f)
    for (Eigen::Index i = 0; i < images[f].size(); ++i) m[f].add(images[f].data()[i]);
  return m;
}

/// Per-filter mean and standard deviation over every raw response pixel of the
/// training slabs; the result carries them in norm_mean / norm_std.
inline FilterBank fit_normalization(const FilterBank& bank, std::span<const VoxelGrid> slabs, unsigned threads = 1) {
  if (slabs.empty()) throw InsufficientDataError("fit_normalization needs at least one slab");
  std::vector<std::vector<Moments>> per_slab(slabs.size());
  parallel_for(slabs.size(), threads, [&](std::size_t i) { per_slab[i] = response_moments(slabs[i], bank); });
  std::vector<Moments> total(bank.n_filters());
  for (const auto& ms : per_slab)
    for (std::size_t f = 0; f < ms.size(); ++f) total[f].merge(ms[f]);
  FilterBank out = bank;
  out.norm_mean.resize(total.size());
  out.norm_std.resize(total.size());
  for (std::size_t f = 0; f < total.size(); ++f) {
    out.norm_mean[f] = total[f].mean;
    out.norm_std[f] = std::max(std::sqrt(total[f].variance()), kStdFloor);
  }
  return out;
}

inline std::vector<Image> normalize_responses(std::vector<Image> raw, const FilterBank& bank) {
  if (!bank.normalized()) throw PreconditionError("filter bank normalisation has not been fitted");
  for (std::size_t f = 0; f < raw.size(); ++f)
    raw[f] = (raw[f].array() - bank.norm_mean[f]) / bank.norm_std[f];
  return raw;
}

/// Max over pool x pool blocks after zero-padding up to a multiple of pool.
inline Image max_pool(const Image& img, int pool) {
  if (pool < 1) throw PreconditionError("pool size must be >= 1");
  const int ph = static_cast<int>((img.rows() + pool - 1) / pool);
  const int pw = static_cast<int>((img.cols() + pool - 1) / pool);
  Image out(ph, pw);
  for (int py = 0; py < ph; ++py) {
    for (int px = 0; px < pw; ++px) {
      double m = -std::numeric_limits<double>::infinity();
      for (int y = py * pool; y < (py + 1) * pool; ++y)
        for (int x = px * pool; x < (px + 1) * pool; ++x)
          m = std::max(m, (y < img.rows() && x < img.cols()) ? img(y, x) : 0.0);
      out(py, px) = m;
    }
  }
  return out;
}

struct ResponseStack {
  int slab_index = 0;
  std::vector<Image> images;  // tanh(alpha * normalised response), one per filter
  std::vector<Image> pooled;

  int n_filters() const noexcept { return static_cast<int>(pooled.size()); }
  int pooled_size() const noexcept { return pooled.empty() ? 0 : static_cast<int>(pooled.front().rows()); }
};

inline double bounded_tanh(double v) {
  constexpr double lim = 0.99999999999999989;  // largest double below 1
  return std::clamp(std::tanh(v), -lim, lim);
}

inline ResponseStack respond(const VoxelGrid& slab, const FilterBank& bank, int pool, int slab_index = 0) {
  ResponseStack st;
  st.slab_index = slab_index;
  st.images = normalize_responses(convolve_slab(slab, bank), bank);
  st.pooled.reserve(st.images.size());
  for (auto& img : st.images) {
    img = img.unaryExpr([&](double v) { return bounded_tanh(bank.alpha * v); });
    st.pooled.push_back(max_pool(img, pool));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Response dump: uint32 LE header length, JSON header {n_filters, h, w, slab_index},
// then n_filters * h * w little-endian float32 values of the pooled maps (row-major).

namespace detail {

inline void put_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated binary file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f32_le(std::ostream& out, float f) { put_u32_le(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32_le(std::istream& in) { return std::bit_cast<float>(get_u32_le(in)); }

}  // namespace detail

inline void write_response_dump(const ResponseStack& st, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write response dump " + path.string());
  const int h = st.pooled.empty() ? 0 : static_cast<int>(st.pooled[0].rows());
  const int w = st.pooled.empty() ? 0 : static_cast<int>(st.pooled[0].cols());
  const std::string header =
      nlohmann::json{{"n_filters", st.n_filters()}, {"h", h}, {"w", w}, {"slab_index", st.slab_index}}.dump();
  detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& img : st.pooled)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) detail::put_f32_le(out, static_cast<float>(img(y, x)));
}

/// Reads a dump back; pooled maps hold the float32 values, images stay empty.
inline ResponseStack read_response_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open response dump " + path.string());
  const std::uint32_t len = detail::get_u32_le(in);
  std::string header(len, '\0');
  if (!in.read(header.data(), len)) throw IoError("truncated response dump header");
  const auto j = nlohmann::json::parse(header);
  ResponseStack st;
  st.slab_index = j.at("slab_index").get<int>();
  const int n = j.at("n_filters").get<int>(), h = j.at("h").get<int>(), w = j.at("w").get<int>();
  for (int f = 0; f < n; ++f) {
    Image img(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img(y, x) = detail::get_f32_le(in);
    st.pooled.push_back(std::move(img));
  }
  return st;
}

}  // namespace stf

#endif  // STF_FILTERBANK_HPP
