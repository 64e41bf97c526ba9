#include <cstdlib>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "stf/cnn.hpp"
#include "test_util.hpp"

namespace {

struct Result {
  int status;
  std::string output;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(STF_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  Result r{-1, {}};
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new stf::test::TempDir("cli");
    const auto r = run("synth --out " + (*dir_ / "ds").string() +
                       " --classes moving_bar,expanding_ring --width 16 --height 16 --train-subjects 2"
                       " --test-subjects 1 --reps 2 --duration 400000 --rate 3000 --seed 4");
    ASSERT_EQ(r.status, 0) << r.output;
    std::ofstream cfg(*dir_ / "c.json");
    cfg << R"({"manifest": ")" << (*dir_ / "ds" / "manifest.json").string() << R"(",
      "a": 4, "k": 10, "t_vox": 5000, "n_filters": 3, "m_samples": 600, "pool": 4,
      "cnn": {"epochs": 3, "batch_size": 8},
      "protocol": {"t_total": 200000, "window": 50000, "overlap": 25000}})";
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& rel) { return (*dir_ / rel).string(); }
  static stf::test::TempDir* dir_;
};

stf::test::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, EvalWithoutModelIsUsageError) {
  const auto r = run("eval --config " + path("c.json") + " --bank " + path("missing.json"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("Usage"), std::string::npos);
  EXPECT_EQ(run("no-such-command").status, 2);
}

TEST_F(Cli, RuntimeErrorExitsOne) {
  std::ofstream(path("bad_manifest.json")) << "{}";
  const auto r = run("train --manifest " + path("bad_manifest.json") + " --run " + path("bad"));
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.output.find("error"), std::string::npos);
}

TEST_F(Cli, TrainTwiceGivesIdenticalModels) {
  for (const char* run_name : {"r1", "r2"}) {
    const auto r = run("train --config " + path("c.json") + " --seed 7 --run " + path(run_name));
    ASSERT_EQ(r.status, 0) << r.output;
  }
  EXPECT_EQ(stf::test::slurp(path("r1/model/model.bin")), stf::test::slurp(path("r2/model/model.bin")));
  EXPECT_EQ(stf::test::slurp(path("r1/filters/bank.json")), stf::test::slurp(path("r2/filters/bank.json")));
  const auto meta = nlohmann::json::parse(stf::test::slurp(path("r1/run.json")));
  EXPECT_EQ(meta.at("seed"), 7);
  EXPECT_TRUE(meta.at("artifacts").contains("model/model.bin"));
  EXPECT_EQ(stf::load_model(path("r1/model/model.bin")).config.input_channels, 3);
}

TEST_F(Cli, EvalAndSweepNoiseReports) {
  ASSERT_EQ(run("train --config " + path("c.json") + " --run " + path("r3")).status, 0);
  const std::string artifacts = " --bank " + path("r3/filters/bank.json") + " --model " + path("r3/model/model.bin");
  auto r = run("eval --config " + path("c.json") + " --run " + path("r3") + artifacts);
  ASSERT_EQ(r.status, 0) << r.output;
  const auto report = nlohmann::json::parse(stf::test::slurp(path("r3/reports/eval.json")));
  EXPECT_EQ(report.at("decisions").size(), 4u);
  r = run("sweep-noise --config " + path("c.json") + " --run " + path("r3") + artifacts +
          " --deltas 0,2000,4000,8000,16000,32000");
  ASSERT_EQ(r.status, 0) << r.output;
  const std::string csv = stf::test::slurp(path("r3/reports/sweep_noise.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);  // header + 6 rows
}

TEST_F(Cli, FlagsOverrideConfig) {
  const auto r = run("learn-filters --config " + path("c.json") + " --method pca --n-filters 2 --run " + path("r4"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto bank = stf::load_bank(path("r4/filters/bank.json"));
  EXPECT_EQ(bank.method, stf::FilterMethod::pca);
  EXPECT_EQ(bank.n_filters(), 2);
  EXPECT_EQ(bank.a, 4);
  ASSERT_EQ(run("export-filters --bank " + path("r4/filters/bank.json") + " --out " + path("r4/png")).status, 0);
  EXPECT_TRUE(std::filesystem::exists(path("r4/png/filter_01_t09.pgm")));
}
