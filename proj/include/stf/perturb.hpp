#ifndef STF_PERTURB_HPP
#define STF_PERTURB_HPP

// Event-removal perturbation: every event in a patch is replaced by its nearest
// spatiotemporal neighbour and the result is re-counted as a set.

#include <algorithm>
#include <cstdint>
#include <span>
#include <tuple>
#include <vector>

#include "stf/common.hpp"
#include "stf/voxel.hpp"

namespace stf {

/// Squared distance scaled by time_scale^2: (dx^2 + dy^2) * s^2 + dt^2, i.e. the
/// metric dx^2 + dy^2 + (dt/s)^2 multiplied through so comparisons are exact.
inline unsigned __int128 scaled_distance2(const Event& a, const Event& b, std::int64_t time_scale) noexcept {
  const auto dx = static_cast<__int128>(a.x) - b.x;
  const auto dy = static_cast<__int128>(a.y) - b.y;
  const auto dt = static_cast<__int128>(a.t) - b.t;
  const auto s = static_cast<__int128>(time_scale);
  return static_cast<unsigned __int128>((dx * dx + dy * dy) * s * s + dt * dt);
}

/// argmin over j != i of dx^2 + dy^2 + (dt/time_scale)^2, ties to the smallest j.
inline std::size_t nearest_neighbor(std::span<const Event> events, std::size_t i, std::int64_t time_scale) {
  if (events.size() < 2) throw PreconditionError("nearest_neighbor needs at least two events");
  if (i >= events.size()) throw PreconditionError("event index out of range");
  if (time_scale <= 0) throw PreconditionError("time scale must be positive");
  std::size_t best = i == 0 ? 1 : 0;
  auto best_d = scaled_distance2(events[i], events[best], time_scale);
  for (std::size_t j = best + 1; j < events.size(); ++j) {
    if (j == i) continue;
    const auto d = scaled_distance2(events[i], events[j], time_scale);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

/// Events carry no identity beyond (x, y, t); the perturbed set is deduplicated on that key.
inline void dedup_events(std::vector<Event>& events) {
  auto key = [](const Event& e) { return std::tie(e.t, e.x, e.y); };
  std::sort(events.begin(), events.end(), [&](const Event& a, const Event& b) { return key(a) < key(b); });
  events.erase(std::unique(events.begin(), events.end(),
                           [&](const Event& a, const Event& b) { return key(a) == key(b); }),
               events.end());
}

/// phi(X). time_scale is the divisor applied to dt in the neighbour metric (normally t_vox).
inline RoiSample phi(const RoiSample& sample, std::int64_t time_scale) {
  if (sample.events.size() < 2) return sample;
  std::vector<Event> moved;
  moved.reserve(sample.events.size());
  for (std::size_t i = 0; i < sample.events.size(); ++i)
    moved.push_back(sample.events[nearest_neighbor(sample.events, i, time_scale)]);
  dedup_events(moved);
  RoiSample out;
  out.a = sample.a;
  out.k = sample.k;
  out.t_vox = sample.t_vox;
  out.t_start = sample.t_start;
  out.origin = sample.origin;
  out.events = std::move(moved);
  out.values = count_into_roi(out, out.events);
  return out;
}

inline RoiSample phi(const RoiSample& sample) { return phi(sample, sample.t_vox); }

}  // namespace stf

#endif  // STF_PERTURB_HPP
