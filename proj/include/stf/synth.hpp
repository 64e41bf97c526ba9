#ifndef STF_SYNTH_HPP
#define STF_SYNTH_HPP

// Synthetic labeled event streams: analytic moving patterns with Poisson event
// emission along their edges plus uniform background noise.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "stf/common.hpp"
#include "stf/events.hpp"

namespace stf {

enum class Pattern { moving_bar, oscillating_bar, rotating_edge, expanding_ring, clap, static_flicker };

inline const char* to_string(Pattern p) {
  switch (p) {
    case Pattern::moving_bar: return "moving_bar";
    case Pattern::oscillating_bar: return "oscillating_bar";
    case Pattern::rotating_edge: return "rotating_edge";
    case Pattern::expanding_ring: return "expanding_ring";
    case Pattern::clap: return "clap";
    case Pattern::static_flicker: return "static_flicker";
  }
  return "?";
}

inline Pattern pattern_from_string(const std::string& s) {
  for (Pattern p : {Pattern::moving_bar, Pattern::oscillating_bar, Pattern::rotating_edge,
                    Pattern::expanding_ring, Pattern::clap, Pattern::static_flicker})
    if (s == to_string(p)) return p;
  throw PreconditionError("unknown pattern '" + s + "'");
}

struct SceneSpec {
  int class_id = 0;
  std::string name;  // category name; defaults to the pattern name
  Pattern pattern = Pattern::moving_bar;
  double velocity = 32.0;              // px/s; sign selects direction where meaningful
  std::int64_t duration = 1'000'000;   // us
  double event_rate = 5000.0;          // events/s along active edges
  double background_noise_rate = 0.0;  // events/s/pixel
  double phase = 0.0;                  // px offset of the starting position
  std::uint64_t seed = 0;

  std::string category() const { return name.empty() ? to_string(pattern) : name; }
};

inline void validate(const SceneSpec& s) {
  if (s.duration <= 0) throw PreconditionError("scene duration must be positive");
  if (!(s.event_rate > 0)) throw PreconditionError("scene event_rate must be positive");
  if (!(s.background_noise_rate >= 0)) throw PreconditionError("background_noise_rate must be >= 0");
}

namespace detail {

// Position of a point bouncing in [lo, hi] at constant speed.
inline double triangle(double start, double speed, double t, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(start - lo + speed * t, 2 * span);
  if (u < 0) u += 2 * span;
  return u <= span ? lo + u : hi - (u - span);
}

// Sign of the bouncing point's velocity at time t.
inline double triangle_dir(double start, double speed, double t, double lo, double hi) {
  const double span = hi - lo;
  double u = std::fmod(start - lo + speed * t, 2 * span);
  if (u < 0) u += 2 * span;
  return (u <= span) == (speed >= 0) ? 1.0 : -1.0;
}

struct Emitted {
  double x, y;
  int polarity;
};

inline Emitted sample_edge(const SceneSpec& s, SensorGeometry g, double t_sec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double w = g.width, h = g.height;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double v = s.velocity;
  const bool coin = unit(rng) < 0.5;
  switch (s.pattern) {
    case Pattern::moving_bar: {
      // Vertical bar of width 2 moving along x, wrapping so it re-enters after fully leaving.
      const double bar = 2.0;
      const double period = w + bar;
      double lead = std::fmod(s.phase + v * t_sec, period);
      if (lead < 0) lead += period;
      const double trail = v >= 0 ? lead - bar : lead + bar;
      const double x = coin ? lead : trail;
      return {x, unit(rng) * h, coin ? 1 : -1};
    }
    case Pattern::oscillating_bar: {
      const double y = triangle(s.phase, v, t_sec, 0.0, h - 1);
      const double dir = triangle_dir(s.phase, v, t_sec, 0.0, h - 1);
      const double edge = coin ? y + 0.5 * dir : y - 0.5 * dir;
      return {unit(rng) * w, edge + 0.5, coin ? 1 : -1};
    }
    case Pattern::rotating_edge: {
      const double radius = std::min(cx, cy);
      const double angle = (s.phase + v * t_sec) / radius;
      const double r = unit(rng) * radius;
      return {cx + 0.5 + r * std::cos(angle), cy + 0.5 + r * std::sin(angle), coin ? 1 : -1};
    }
    case Pattern::expanding_ring: {
      const double radius = std::min(cx, cy);
      double r = std::fmod(std::abs(s.phase) + std::abs(v) * t_sec, radius);
      if (v < 0) r = radius - r;
      const double theta = unit(rng) * 2 * std::numbers::pi;
      return {cx + 0.5 + r * std::cos(theta), cy + 0.5 + r * std::sin(theta), v >= 0 ? 1 : -1};
    }
    case Pattern::clap: {
      // Two vertical bars converging on the centre and separating again.
      const double d = triangle(cx - 1 + s.phase, -std::abs(v), t_sec, 1.0, cx);
      const double x = coin ? cx - d : cx + d;
      return {x + 0.5, h / 4 + unit(rng) * h / 2, coin ? 1 : -1};
    }
    case Pattern::static_flicker: {
      // Fixed 4x4 patch near the centre.
      const double x0 = std::floor(cx - 1 + s.phase), y0 = std::floor(cy - 1);
      return {x0 + std::floor(unit(rng) * 4), y0 + std::floor(unit(rng) * 4), coin ? 1 : -1};
    }
  }
  return {0, 0, 1};
}

}  // namespace detail

/// Pixel set covered by a static_flicker scene.
inline std::vector<std::pair<int, int>> flicker_pixels(const SceneSpec& s, SensorGeometry g) {
  const double cx = (g.width - 1) / 2.0, cy = (g.height - 1) / 2.0;
  const int x0 = static_cast<int>(std::floor(cx - 1 + s.phase));
  const int y0 = static_cast<int>(std::floor(cy - 1));
  std::vector<std::pair<int, int>> out;
  for (int dy = 0; dy < 4; ++dy)
    for (int dx = 0; dx < 4; ++dx) out.emplace_back(x0 + dx, y0 + dy);
  return out;
}

inline EventRecording generate(const SceneSpec& spec, SensorGeometry geometry) {
  validate(spec);
  if (geometry.width <= 0 || geometry.height <= 0) throw GeometryError("sensor geometry must be positive");
  std::mt19937_64 rng(derive_seed(spec.seed, 0x5eed));
  EventRecording rec;
  rec.geometry = geometry;
  rec.label = spec.class_id;
  rec.metadata["pattern"] = to_string(spec.pattern);

  // Edge events: homogeneous Poisson process in continuous time.
  {
    std::exponential_distribution<double> gap(spec.event_rate * 1e-6);
    double t = gap(rng);
    while (t < static_cast<double>(spec.duration)) {
      const auto em = detail::sample_edge(spec, geometry, t * 1e-6, rng);
      Event e{static_cast<std::int32_t>(std::floor(em.x)), static_cast<std::int32_t>(std::floor(em.y)),
              static_cast<std::int64_t>(t), static_cast<std::int8_t>(em.polarity)};
      if (in_bounds(e, geometry)) rec.events.push_back(e);
      t += gap(rng);
    }
  }
  if (spec.background_noise_rate > 0) {
    std::mt19937_64 noise(derive_seed(spec.seed, 0xb6));
    const double rate = spec.background_noise_rate * geometry.width * geometry.height;
    std::exponential_distribution<double> gap(rate * 1e-6);
    std::uniform_int_distribution<int> px(0, geometry.width - 1), py(0, geometry.height - 1), pol(0, 1);
    double t = gap(noise);
    while (t < static_cast<double>(spec.duration)) {
      Event e{px(noise), py(noise), static_cast<std::int64_t>(t), static_cast<std::int8_t>(pol(noise) ? 1 : -1)};
      rec.events.push_back(e);
      t += gap(noise);
    }
  }
  sort_by_time(rec.events);
  return rec;
}

struct DatasetOptions {
  SensorGeometry geometry{32, 32};
  int n_subjects_train = 6;
  int n_subjects_test = 2;
  int recordings_per_subject = 5;
  double velocity_jitter = 0.2;  // multiplicative, per subject
  double phase_jitter = 1.0;     // px, additive, per subject
  double rate_jitter = 0.0;      // multiplicative, per recording
  std::uint64_t seed = 1;
};

/// Writes one CSV per (class, subject, repetition) under out_dir/recordings and a
/// manifest.json with a subject-disjoint train/test split. Returns the manifest.
inline DatasetManifest build_dataset(const std::vector<SceneSpec>& specs, const DatasetOptions& opt,
                                     const std::filesystem::path& out_dir) {
  if (specs.size() < 2) throw PreconditionError("a dataset needs at least two classes");
  if (opt.n_subjects_train <= 0) throw PreconditionError("n_subjects_train must be positive");
  if (opt.n_subjects_test <= 0) throw PreconditionError("n_subjects_test must be positive (subject-disjoint split)");
  if (opt.recordings_per_subject <= 0) throw PreconditionError("recordings_per_subject must be positive");
  for (const auto& s : specs) validate(s);

  DatasetManifest m;
  m.geometry = opt.geometry;
  m.base_dir = out_dir;
  for (const auto& s : specs) m.categories.push_back(s.category());

  const int n_subjects = opt.n_subjects_train + opt.n_subjects_test;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    for (int subj = 0; subj < n_subjects; ++subj) {
      std::mt19937_64 jit(derive_seed(opt.seed, (c << 20) ^ static_cast<std::uint64_t>(subj)));
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double vel_scale = 1.0 + opt.velocity_jitter * u(jit);
      const double phase_shift = opt.phase_jitter * u(jit);
      char subject[16];
      std::snprintf(subject, sizeof subject, "s%02d", subj);
      for (int rep = 0; rep < opt.recordings_per_subject; ++rep) {
        SceneSpec s = specs[c];
        s.class_id = static_cast<int>(c);
        s.velocity *= vel_scale;
        s.phase += phase_shift;
        const std::uint64_t stream = (c << 40) ^ (static_cast<std::uint64_t>(subj) << 20) ^ rep;
        std::mt19937_64 rec_rng(derive_seed(opt.seed ^ s.seed, stream));
        s.seed = rec_rng();
        if (opt.rate_jitter > 0)
          s.event_rate *= 1.0 + opt.rate_jitter * std::uniform_real_distribution<double>(-1.0, 1.0)(rec_rng);
        EventRecording rec = generate(s, opt.geometry);
        char file[64];
        std::snprintf(file, sizeof file, "%s_r%02d.csv", subject, rep);
        const std::filesystem::path rel = std::filesystem::path("recordings") / m.categories[c] / file;
        save_recording(rec, out_dir / rel);
        m.recordings.push_back({rel, static_cast<int>(c), subject,
                                subj < opt.n_subjects_train ? Split::train : Split::test});
      }
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace stf

#endif  // STF_SYNTH_HPP
