#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "stf/synth.hpp"
#include "test_util.hpp"

using namespace stf;

TEST(Synth, StaticFlickerCountAndSupport) {
  SceneSpec s;
  s.pattern = Pattern::static_flicker;
  s.event_rate = 1000;
  s.duration = 1'000'000;
  s.seed = 21;
  const SensorGeometry g{32, 32};
  const auto rec = generate(s, g);
  EXPECT_NEAR(static_cast<double>(rec.size()), 1000.0, 100.0);
  std::set<std::pair<int, int>> support;
  for (auto [x, y] : flicker_pixels(s, g)) support.emplace(x, y);
  for (const auto& e : rec.events) EXPECT_TRUE(support.count({e.x, e.y}));
}

TEST(Synth, MovingBarCentroidFollowsTrajectory) {
  // The bar wraps around the sensor, so centroids are taken on the circle of
  // circumference W + 2 and the displacement is unwrapped forward.
  SceneSpec s;
  s.pattern = Pattern::moving_bar;
  s.velocity = 32;
  s.duration = 1'000'000;
  s.seed = 5;
  const SensorGeometry g{32, 32};
  const auto rec = generate(s, g);
  const double period = g.width + 2;
  auto circular_centroid = [&](std::int64_t t0, std::int64_t t1) {
    double c = 0, sn = 0;
    for (const auto& e : rec.events)
      if (e.t >= t0 && e.t < t1) {
        const double th = 2 * std::numbers::pi * (e.x + 0.5) / period;
        c += std::cos(th);
        sn += std::sin(th);
      }
    return std::atan2(sn, c) * period / (2 * std::numbers::pi);
  };
  const double first = circular_centroid(0, 100'000), last = circular_centroid(900'000, 1'000'000);
  double shift = std::fmod(last - first + 2 * period, period);
  EXPECT_NEAR(shift, 32 * 0.9, 3.0);
}

TEST(Synth, OneMicrosecondDurationIsValid) {
  SceneSpec s;
  s.duration = 1;
  const auto rec = generate(s, {32, 32});
  EXPECT_LE(rec.size(), 2u);
  SceneSpec z;
  z.duration = 0;
  EXPECT_THROW(generate(z, {32, 32}), PreconditionError);
}

TEST(Synth, GenerateIsDeterministicAndSorted) {
  SceneSpec s;
  s.pattern = Pattern::rotating_edge;
  s.background_noise_rate = 0.5;
  s.seed = 77;
  const auto a = generate(s, {32, 32}), b = generate(s, {32, 32});
  EXPECT_EQ(a.events, b.events);
  for (std::size_t i = 0; i + 1 < a.size(); ++i) ASSERT_LE(a.events[i].t, a.events[i + 1].t);
  for (const auto& e : a.events) ASSERT_TRUE(in_bounds(e, a.geometry));
}

TEST(Synth, EveryPatternProducesEvents) {
  for (auto p : {Pattern::moving_bar, Pattern::oscillating_bar, Pattern::rotating_edge, Pattern::expanding_ring,
                 Pattern::clap, Pattern::static_flicker}) {
    SceneSpec s;
    s.pattern = p;
    s.seed = 3;
    const auto rec = generate(s, {32, 32});
    EXPECT_GT(rec.size(), 1000u) << to_string(p);
    EXPECT_EQ(pattern_from_string(to_string(p)), p);
  }
  EXPECT_THROW(pattern_from_string("spiral"), PreconditionError);
}

namespace {

std::vector<SceneSpec> four_classes() {
  std::vector<SceneSpec> specs(4);
  const Pattern ps[] = {Pattern::moving_bar, Pattern::rotating_edge, Pattern::expanding_ring, Pattern::clap};
  for (int i = 0; i < 4; ++i) {
    specs[i].pattern = ps[i];
    specs[i].duration = 200'000;
    specs[i].event_rate = 800;
  }
  return specs;
}

}  // namespace

TEST(SynthDataset, CountsAndSplit) {
  test::TempDir dir("synth");
  const auto m = build_dataset(four_classes(), DatasetOptions{}, dir.path());
  EXPECT_EQ(m.recordings.size(), 160u);
  EXPECT_EQ(m.count(Split::train), 120u);
  EXPECT_EQ(m.count(Split::test), 40u);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "recordings"))
    files += e.is_regular_file();
  EXPECT_EQ(files, 160u);
  const auto loaded = load_manifest(dir / "manifest.json");
  EXPECT_EQ(loaded.categories, m.categories);
  check_subject_disjoint(loaded);
}

TEST(SynthDataset, ByteIdenticalAcrossRuns) {
  test::TempDir a("synth"), b("synth");
  DatasetOptions opt;
  opt.recordings_per_subject = 2;
  opt.rate_jitter = 0.5;
  build_dataset(four_classes(), opt, a.path());
  build_dataset(four_classes(), opt, b.path());
  for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a.path());
    EXPECT_EQ(test::slurp(e.path()), test::slurp(b.path() / rel)) << rel;
  }
}

TEST(SynthDataset, Preconditions) {
  test::TempDir dir("synth");
  DatasetOptions opt;
  opt.n_subjects_test = 0;
  EXPECT_THROW(build_dataset(four_classes(), opt, dir.path()), PreconditionError);
  EXPECT_THROW(build_dataset({four_classes()[0]}, DatasetOptions{}, dir.path()), PreconditionError);
}
