#ifndef STF_VOXEL_HPP
#define STF_VOXEL_HPP

// Dense spike-count grids over (y, x, time-bin), ROI sampling and temporal slabs.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "stf/common.hpp"
#include "stf/events.hpp"

namespace stf {

/// counts are stored with the time bin fastest: index = (y * width + x) * n_bins + bin.
struct VoxelGrid {
  int height = 0;
  int width = 0;
  int n_bins = 0;
  std::int64_t t_vox = 1;
  std::int64_t t_origin = 0;
  std::vector<std::uint32_t> counts;

  VoxelGrid() = default;
  VoxelGrid(int h, int w, int bins, std::int64_t tv, std::int64_t t0)
      : height(h), width(w), n_bins(bins), t_vox(tv), t_origin(t0),
        counts(static_cast<std::size_t>(h) * w * bins, 0u) {}

  std::size_t index(int y, int x, int bin) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * n_bins + bin;
  }
  std::uint32_t at(int y, int x, int bin) const { return counts[index(y, x, bin)]; }
  std::uint32_t& at(int y, int x, int bin) { return counts[index(y, x, bin)]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;
};

/// Bins events with t >= t_origin into voxels of duration t_vox. The bin count covers
/// the last event; an empty input gives a 0-bin grid.
inline VoxelGrid voxelize(std::span<const Event> events, SensorGeometry g, std::int64_t t_vox,
                          std::int64_t t_origin) {
  if (t_vox <= 0) throw PreconditionError("t_vox must be positive");
  std::int64_t t_last = -1;
  for (const Event& e : events)
    if (e.t >= t_origin) t_last = std::max(t_last, e.t);
  const int n_bins = t_last < 0 ? 0 : static_cast<int>((t_last - t_origin + 1 + t_vox - 1) / t_vox);
  VoxelGrid grid(g.height, g.width, n_bins, t_vox, t_origin);
  for (const Event& e : events) {
    if (e.t < t_origin) continue;
    ++grid.at(e.y, e.x, static_cast<int>((e.t - t_origin) / t_vox));
  }
  return grid;
}

inline VoxelGrid voxelize(const EventRecording& rec, std::int64_t t_vox, std::int64_t t_origin) {
  return voxelize(rec.events, rec.geometry, t_vox, t_origin);
}

/// t_origin defaults to the first event's timestamp.
inline VoxelGrid voxelize(const EventRecording& rec, std::int64_t t_vox) {
  return voxelize(rec, t_vox, rec.t_first());
}

/// Fixed-length grid of exactly n_bins bins starting at t_start; events outside
/// [t_start, t_start + n_bins * t_vox) are ignored. Events must be time-sorted.
inline VoxelGrid voxelize_window(std::span<const Event> events, SensorGeometry g, std::int64_t t_vox,
                                 std::int64_t t_start, int n_bins) {
  if (t_vox <= 0) throw PreconditionError("t_vox must be positive");
  VoxelGrid grid(g.height, g.width, n_bins, t_vox, t_start);
  const std::int64_t t_end = t_start + n_bins * t_vox;
  auto first = std::lower_bound(events.begin(), events.end(), t_start,
                                [](const Event& e, std::int64_t t) { return e.t < t; });
  for (auto it = first; it != events.end() && it->t < t_end; ++it)
    ++grid.at(it->y, it->x, static_cast<int>((it->t - t_start) / t_vox));
  return grid;
}

/// floor(n_bins / k) consecutive slabs of k bins; trailing remainder bins are dropped.
inline std::vector<VoxelGrid> partition_slabs(const VoxelGrid& grid, int k) {
  if (k < 1) throw PreconditionError("slab depth k must be >= 1");
  const int n_slabs = grid.n_bins / k;
  std::vector<VoxelGrid> slabs;
  slabs.reserve(n_slabs);
  for (int s = 0; s < n_slabs; ++s) {
    VoxelGrid slab(grid.height, grid.width, k, grid.t_vox, grid.t_origin + s * k * grid.t_vox);
    for (int y = 0; y < grid.height; ++y)
      for (int x = 0; x < grid.width; ++x)
        for (int b = 0; b < k; ++b) slab.at(y, x, b) = grid.at(y, x, s * k + b);
    slabs.push_back(std::move(slab));
  }
  return slabs;
}

// ---------------------------------------------------------------------------
// ROI samples

struct RoiOrigin {
  int x = 0;
  int y = 0;
  int bin = 0;
  friend bool operator==(const RoiOrigin&, const RoiOrigin&) = default;
};

/// An a x a x k patch of the voxel grid. values are flattened with index
/// (bin * a + dy) * a + dx; events are the spikes that fall inside the patch.
struct RoiSample {
  int a = 0;
  int k = 0;
  std::int64_t t_vox = 1;
  std::int64_t t_start = 0;  // absolute time of the patch's first bin
  RoiOrigin origin;
  std::vector<std::uint32_t> values;
  std::vector<Event> events;

  std::size_t dim() const noexcept { return values.size(); }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : values) s += v;
    return s;
  }
};

inline constexpr std::size_t roi_index(int a, int dx, int dy, int bin) noexcept {
  return (static_cast<std::size_t>(bin) * a + dy) * a + dx;
}

/// Re-counts events into the patch geometry of `like`; events outside the patch are skipped.
inline std::vector<std::uint32_t> count_into_roi(const RoiSample& like, std::span<const Event> events) {
  std::vector<std::uint32_t> values(static_cast<std::size_t>(like.a) * like.a * like.k, 0u);
  for (const Event& e : events) {
    const int dx = e.x - like.origin.x, dy = e.y - like.origin.y;
    if (dx < 0 || dy < 0 || dx >= like.a || dy >= like.a || e.t < like.t_start) continue;
    const std::int64_t bin = (e.t - like.t_start) / like.t_vox;
    if (bin >= like.k) continue;
    ++values[roi_index(like.a, dx, dy, static_cast<int>(bin))];
  }
  return values;
}

/// Extracts the patch at `origin` of the grid anchored at t_origin from time-sorted events.
inline RoiSample extract_roi(std::span<const Event> events, int a, int k, std::int64_t t_vox,
                             std::int64_t t_origin, RoiOrigin origin) {
  RoiSample s;
  s.a = a;
  s.k = k;
  s.t_vox = t_vox;
  s.origin = origin;
  s.t_start = t_origin + origin.bin * t_vox;
  const std::int64_t t_end = s.t_start + k * t_vox;
  auto first = std::lower_bound(events.begin(), events.end(), s.t_start,
                                [](const Event& e, std::int64_t t) { return e.t < t; });
  for (auto it = first; it != events.end() && it->t < t_end; ++it) {
    if (it->x >= origin.x && it->x < origin.x + a && it->y >= origin.y && it->y < origin.y + a)
      s.events.push_back(*it);
  }
  s.values = count_into_roi(s, s.events);
  return s;
}

/// Draws m non-empty ROIs with uniformly random in-bounds origins. All-zero patches are
/// redrawn; after 100*m draws without m successes InsufficientDataError is thrown.
inline std::vector<RoiSample> sample_rois(const EventRecording& rec, int a, int k, std::int64_t t_vox,
                                          std::size_t m, std::uint64_t seed) {
  if (a < 1 || a > std::min(rec.geometry.width, rec.geometry.height))
    throw PreconditionError("ROI size a must fit inside the sensor");
  if (k < 1) throw PreconditionError("ROI depth k must be >= 1");
  if (m < 1) throw PreconditionError("need at least one ROI sample");
  if (rec.empty()) throw InsufficientDataError("recording has no events to sample ROIs from");
  const std::int64_t t_origin = rec.t_first();
  const int n_bins = static_cast<int>((rec.t_last() - t_origin + 1 + t_vox - 1) / t_vox);
  if (n_bins < k)
    throw InsufficientDataError("recording spans fewer than k voxel bins");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ux(0, rec.geometry.width - a), uy(0, rec.geometry.height - a),
      ub(0, n_bins - k);
  std::vector<RoiSample> out;
  out.reserve(m);
  const std::size_t cap = 100 * m;
  for (std::size_t draw = 0; draw < cap && out.size() < m; ++draw) {
    RoiOrigin o;
    o.x = ux(rng);
    o.y = uy(rng);
    o.bin = ub(rng);
    RoiSample s = extract_roi(rec.events, a, k, t_vox, t_origin, o);
    if (!s.events.empty()) out.push_back(std::move(s));
  }
  if (out.size() < m)
    throw InsufficientDataError("recording too sparse: only " + std::to_string(out.size()) + " of " +
                                std::to_string(m) + " non-empty ROIs after " + std::to_string(cap) +
                                " draws");
  return out;
}

}  // namespace stf

#endif  // STF_VOXEL_HPP
