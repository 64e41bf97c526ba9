#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <gtest/gtest.h>

namespace stf::test {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("stf_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace stf::test

#include "stf/synth.hpp"
#include "stf/voxel.hpp"

namespace stf::test {

/// ROI samples drawn from a few synthetic recordings of different patterns.
inline std::vector<RoiSample> synthetic_rois(int a, int k, std::size_t m, std::uint64_t seed,
                                             std::int64_t t_vox = 4000) {
  std::vector<RoiSample> out;
  const Pattern patterns[] = {Pattern::moving_bar, Pattern::rotating_edge, Pattern::expanding_ring};
  for (int i = 0; i < 3; ++i) {
    SceneSpec s;
    s.pattern = patterns[i];
    s.velocity = 24;
    s.background_noise_rate = 0.5;
    s.seed = seed * 31 + i;
    const auto rec = generate(s, {16, 16});
    const std::size_t mi = m / 3 + (i < static_cast<int>(m % 3) ? 1 : 0);
    auto part = sample_rois(rec, a, k, t_vox, mi, seed + 101 * i);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace stf::test
