#include <random>

#include <gtest/gtest.h>

#include "stf/filterbank.hpp"
#include "test_util.hpp"

using namespace stf;

namespace {

VoxelGrid random_slab(int h, int w, int k, std::mt19937_64& rng, double density = 0.4) {
  VoxelGrid g(h, w, k, 4000, 0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> c(1, 4);
  for (auto& v : g.counts) v = u(rng) < density ? c(rng) : 0;
  return g;
}

FilterBank random_bank(int a, int k, int n, std::mt19937_64& rng) {
  FilterBank b;
  b.a = a;
  b.k = k;
  b.t_vox = 4000;
  b.filters.resize(n, a * a * k);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < b.filters.size(); ++i) b.filters.data()[i] = normal(rng);
  return b;
}

double direct_sum(const VoxelGrid& g, const FilterBank& b, int f, int oy, int ox) {
  double s = 0;
  for (int bin = 0; bin < b.k; ++bin)
    for (int dy = 0; dy < b.a; ++dy)
      for (int dx = 0; dx < b.a; ++dx) s += b.weight(f, dx, dy, bin) * g.at(oy + dy, ox + dx, bin);
  return s;
}

}  // namespace

TEST(Convolve, MatchesDirectSum) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<int> side(3, 10), depth(1, 5);
    const int h = side(rng), w = side(rng), k = depth(rng);
    const int a = std::uniform_int_distribution<int>(1, std::min(h, w))(rng);
    const auto slab = random_slab(h, w, k, rng);
    const auto bank = random_bank(a, k, 2, rng);
    const auto images = convolve_slab(slab, bank);
    ASSERT_EQ(images[0].rows(), h - a + 1);
    ASSERT_EQ(images[0].cols(), w - a + 1);
    for (int f = 0; f < 2; ++f)
      for (int y = 0; y <= h - a; ++y)
        for (int x = 0; x <= w - a; ++x) ASSERT_NEAR(images[f](y, x), direct_sum(slab, bank, f, y, x), 1e-10);
  }
}

TEST(Convolve, EightByEightByThree) {
  std::mt19937_64 rng(2);
  const auto slab = random_slab(8, 8, 3, rng, 0.6);
  const auto bank = random_bank(2, 3, 1, rng);
  const auto img = convolve_slab(slab, bank)[0];
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_NEAR(img(y, x), direct_sum(slab, bank, 0, y, x), 1e-10);
}

TEST(Convolve, ZeroSlabAndDeltaFilter) {
  std::mt19937_64 rng(5);
  const auto bank = random_bank(3, 4, 2, rng);
  const VoxelGrid zero(9, 9, 4, 4000, 0);
  for (const auto& img : convolve_slab(zero, bank)) EXPECT_EQ(img.cwiseAbs().maxCoeff(), 0.0);

  FilterBank delta = bank;
  delta.filters.setZero();
  delta.filters(0, roi_index(3, 0, 0, 0)) = 1.0;
  const auto slab = random_slab(9, 9, 4, rng);
  const auto img = convolve_slab(slab, delta)[0];
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_EQ(img(y, x), slab.at(y, x, 0));
  EXPECT_THROW(convolve_slab(VoxelGrid(9, 9, 3, 4000, 0), bank), DimensionError);
  EXPECT_THROW(convolve_slab(VoxelGrid(2, 9, 4, 4000, 0), bank), DimensionError);
}

TEST(Normalization, SelfConsistent) {
  std::mt19937_64 rng(8);
  std::vector<VoxelGrid> slabs;
  for (int i = 0; i < 6; ++i) slabs.push_back(random_slab(12, 12, 4, rng, 0.2));
  const auto bank = fit_normalization(random_bank(3, 4, 3, rng), slabs);
  for (int f = 0; f < 3; ++f) {
    Moments m;
    for (const auto& s : slabs) {
      const auto imgs = normalize_responses(convolve_slab(s, bank), bank);
      for (Eigen::Index i = 0; i < imgs[f].size(); ++i) m.add(imgs[f].data()[i]);
    }
    EXPECT_NEAR(m.mean, 0.0, 1e-9);
    EXPECT_NEAR(m.variance(), 1.0, 1e-6);
  }
}

TEST(Normalization, ConstantResponseUsesStdFloor) {
  std::mt19937_64 rng(3);
  FilterBank bank = random_bank(2, 2, 1, rng);
  bank.filters.setZero();
  const auto fitted = fit_normalization(bank, std::vector<VoxelGrid>{random_slab(5, 5, 2, rng)});
  EXPECT_EQ(fitted.norm_std[0], kStdFloor);
  const auto st = respond(random_slab(5, 5, 2, rng), fitted, 2);
  for (const auto& img : st.pooled) EXPECT_TRUE(img.allFinite());
  EXPECT_THROW(respond(random_slab(5, 5, 2, rng), bank, 2), PreconditionError);
}

TEST(Moments, MergeEqualsConcatenation) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(3.0, 2.0);
  Moments left, right, all;
  for (int i = 0; i < 300; ++i) {
    const double v = n(rng);
    (i < 120 ? left : right).add(v);
    all.add(v);
  }
  Moments merged = left;
  merged.merge(right);
  EXPECT_EQ(merged.n, all.n);
  EXPECT_NEAR(merged.mean, all.mean, 1e-12);
  EXPECT_NEAR(merged.variance(), all.variance(), 1e-10);
  Moments empty;
  empty.merge(left);
  EXPECT_EQ(empty.mean, left.mean);
}

TEST(Pooling, PaddedSizes) {
  EXPECT_EQ(max_pool(Image::Zero(123, 123), 4).rows(), 31);
  EXPECT_EQ(max_pool(Image::Zero(27, 27), 4).rows(), 7);
  Image img(3, 3);
  img << -1, -2, -3, -4, 5, -6, -7, -8, -9;
  const Image p = max_pool(img, 2);
  ASSERT_EQ(p.rows(), 2);
  EXPECT_EQ(p(0, 0), 5);
  EXPECT_EQ(p(0, 1), 0);  // padding zeros take part in the max
  EXPECT_EQ(p(1, 1), 0);
  EXPECT_THROW(max_pool(img, 0), PreconditionError);
}

TEST(Respond, TanhBoundsAndZeroImage) {
  EXPECT_EQ(bounded_tanh(0.0), 0.0);
  EXPECT_LT(bounded_tanh(1e6), 1.0);
  EXPECT_GT(bounded_tanh(-1e6), -1.0);

  std::mt19937_64 rng(6);
  FilterBank bank = random_bank(6, 5, 4, rng);
  bank.norm_mean.assign(4, 0.0);
  bank.norm_std.assign(4, 1.0);
  const auto zero = respond(VoxelGrid(32, 32, 5, 4000, 0), bank, 4);
  ASSERT_EQ(zero.n_filters(), 4);
  EXPECT_EQ(zero.pooled_size(), 7);
  for (const auto& img : zero.pooled) EXPECT_EQ(img.cwiseAbs().maxCoeff(), 0.0);

  bank.alpha = 50.0;
  const auto st = respond(random_slab(32, 32, 5, rng), bank, 4);
  for (const auto& img : st.images) {
    EXPECT_LT(img.maxCoeff(), 1.0);
    EXPECT_GT(img.minCoeff(), -1.0);
  }
}

TEST(ResponseDump, RoundTripsAsFloat32) {
  test::TempDir dir("dump");
  std::mt19937_64 rng(7);
  FilterBank bank = random_bank(3, 2, 2, rng);
  bank.norm_mean.assign(2, 0.5);
  bank.norm_std.assign(2, 2.0);
  const auto st = respond(random_slab(11, 11, 2, rng), bank, 3, 4);
  write_response_dump(st, dir / "r.bin");
  const auto back = read_response_dump(dir / "r.bin");
  EXPECT_EQ(back.slab_index, 4);
  ASSERT_EQ(back.n_filters(), 2);
  for (int f = 0; f < 2; ++f)
    for (Eigen::Index i = 0; i < st.pooled[f].size(); ++i)
      EXPECT_EQ(back.pooled[f].data()[i], static_cast<double>(static_cast<float>(st.pooled[f].data()[i])));
}
