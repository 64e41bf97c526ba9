#include <random>

#include <gtest/gtest.h>

#include "stf/synth.hpp"
#include "stf/voxel.hpp"

using namespace stf;

namespace {

EventRecording rec_of(std::vector<Event> ev, SensorGeometry g = {8, 8}) {
  EventRecording r;
  r.geometry = g;
  r.events = std::move(ev);
  return r;
}

}  // namespace

TEST(Voxelize, EmptyRecordingGivesZeroBins) {
  const auto grid = voxelize(rec_of({}), 4000);
  EXPECT_EQ(grid.n_bins, 0);
  EXPECT_EQ(grid.total(), 0u);
}

TEST(Voxelize, SingleEvent) {
  const auto grid = voxelize(rec_of({{2, 3, 4500, 1}}), 4000, 0);
  ASSERT_EQ(grid.n_bins, 2);
  EXPECT_EQ(grid.at(3, 2, 1), 1u);
  EXPECT_EQ(grid.total(), 1u);
}

TEST(Voxelize, BinBoundaries) {
  const auto grid = voxelize(rec_of({{0, 0, 0, 1}, {0, 0, 3999, 1}, {0, 0, 4000, -1}}), 4000, 0);
  EXPECT_EQ(grid.at(0, 0, 0), 2u);
  EXPECT_EQ(grid.at(0, 0, 1), 1u);
}

TEST(Voxelize, ConservesCountsAndIgnoresOrder) {
  SceneSpec s;
  s.pattern = Pattern::expanding_ring;
  s.seed = 4;
  s.background_noise_rate = 1;
  auto rec = generate(s, {32, 32});
  const auto grid = voxelize(rec, 4000);
  EXPECT_EQ(grid.total(), rec.size());
  std::mt19937_64 rng(8);
  std::shuffle(rec.events.begin(), rec.events.end(), rng);
  EXPECT_EQ(voxelize(rec.events, rec.geometry, 4000, grid.t_origin), grid);
  EXPECT_THROW(voxelize(rec, 0), PreconditionError);
}

TEST(Voxelize, WindowMatchesSliceOfFullGrid) {
  SceneSpec s;
  s.seed = 12;
  const auto rec = generate(s, {32, 32});
  const auto full = voxelize(rec, 4000, 0);
  const auto win = voxelize_window(rec.events, rec.geometry, 4000, 40'000, 25);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int b = 0; b < 25; ++b) ASSERT_EQ(win.at(y, x, b), full.at(y, x, b + 10));
}

TEST(PartitionSlabs, RemainderDropped) {
  auto grid_with_bins = [](int n) { return VoxelGrid(4, 4, n, 4000, 0); };
  EXPECT_EQ(partition_slabs(grid_with_bins(50), 25).size(), 2u);
  EXPECT_EQ(partition_slabs(grid_with_bins(24), 25).size(), 0u);
  VoxelGrid g = grid_with_bins(51);
  g.at(1, 2, 30) = 7;
  g.at(0, 0, 50) = 9;
  const auto slabs = partition_slabs(g, 25);
  ASSERT_EQ(slabs.size(), 2u);
  EXPECT_EQ(slabs[1].at(1, 2, 5), 7u);
  EXPECT_EQ(slabs[1].t_origin, 25 * 4000);
  EXPECT_EQ(slabs[0].total() + slabs[1].total(), 7u);
}

TEST(Roi, ExtractIndexingAndEvents) {
  const auto rec = rec_of({{1, 1, 0, 1}, {3, 2, 4100, 1}, {7, 7, 4200, 1}, {3, 2, 8000 * 25, 1}}, {8, 8});
  const auto s = extract_roi(rec.events, 6, 25, 4000, 0, {0, 0, 0});
  EXPECT_EQ(s.values.size(), 900u);
  EXPECT_EQ(s.values[roi_index(6, 1, 1, 0)], 1u);
  EXPECT_EQ(s.values[roi_index(6, 3, 2, 1)], 1u);
  EXPECT_EQ(s.total(), 2u);
  EXPECT_EQ(s.events.size(), 2u);
  EXPECT_EQ(count_into_roi(s, rec.events), s.values);
}

TEST(Roi, SamplingContract) {
  SceneSpec spec;
  spec.pattern = Pattern::clap;
  spec.seed = 9;
  const auto rec = generate(spec, {32, 32});
  const auto samples = sample_rois(rec, 6, 25, 4000, 300, 17);
  ASSERT_EQ(samples.size(), 300u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.dim(), 900u);
    EXPECT_GE(s.total(), 1u);
    EXPECT_EQ(s.total(), s.events.size());
    EXPECT_LE(s.origin.x, 32 - 6);
    EXPECT_LE(s.origin.y, 32 - 6);
  }
  const auto again = sample_rois(rec, 6, 25, 4000, 300, 17);
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(samples[i].values, again[i].values);
}

TEST(Roi, SamplingErrors) {
  EXPECT_THROW(sample_rois(rec_of({}, {32, 32}), 6, 25, 4000, 10, 1), InsufficientDataError);
  // A single-event recording spans too few bins for a 25-bin ROI.
  EXPECT_THROW(sample_rois(rec_of({{0, 0, 0, 1}}, {32, 32}), 6, 25, 4000, 10, 1), InsufficientDataError);
  // Two events far apart in time: almost every random patch is empty, so the retry cap is hit.
  EXPECT_THROW(sample_rois(rec_of({{0, 0, 0, 1}, {0, 0, 4'000'000, 1}}, {32, 32}), 6, 25, 4000, 50, 1),
               InsufficientDataError);
  EXPECT_THROW(sample_rois(rec_of({{0, 0, 0, 1}}, {4, 4}), 6, 25, 4000, 1, 1), PreconditionError);
}
