#include <gtest/gtest.h>

#include "stf/pipeline.hpp"
#include "test_util.hpp"

using namespace stf;

namespace {

// Two easily separated classes, short recordings and small settings so a full
// train/evaluate cycle runs in seconds.
DatasetManifest tiny_dataset(const std::filesystem::path& dir, int test_subjects = 1) {
  std::vector<SceneSpec> specs(2);
  specs[0].pattern = Pattern::moving_bar;
  specs[1].pattern = Pattern::expanding_ring;
  for (auto& s : specs) {
    s.duration = 400'000;
    s.event_rate = 3000;
    s.velocity = 24;
  }
  DatasetOptions opt;
  opt.geometry = {16, 16};
  opt.n_subjects_train = 2;
  opt.n_subjects_test = test_subjects;
  opt.recordings_per_subject = 2;
  opt.seed = 3;
  return build_dataset(specs, opt, dir);
}

PipelineParams tiny_params() {
  PipelineParams p;
  p.a = 4;
  p.k = 10;
  p.t_vox = 5000;
  p.n_filters = 3;
  p.m_samples = 800;
  p.pool = 4;
  p.optimizer.epochs = 4;
  p.optimizer.batch_size = 8;
  p.protocol = {200'000, 50'000, 25'000};
  p.seed = 2;
  return p;
}

}  // namespace

TEST(Windows, CountFollowsStrideFormula) {
  EXPECT_EQ(window_count(200'000, 100'000, 90'000), 11u);
  EXPECT_EQ(window_count(100'000, 100'000, 0), 1u);
  EXPECT_EQ(window_count(99'999, 100'000, 0), 0u);
  for (std::int64_t total : {100, 150, 333, 1000})
    for (std::int64_t win : {10, 50, 100})
      for (std::int64_t ov : {0, 5, 9}) {
        if (win > total) continue;
        std::size_t brute = 0;
        for (std::int64_t s = 0; s + win <= total; s += win - ov) ++brute;
        EXPECT_EQ(window_count(total, win, ov), brute);
      }
}

TEST(Votes, MajorityThenScoreThenIndex) {
  const std::vector<double> scores = {1.0, 2.0, 0.0};
  EXPECT_EQ(aggregate_votes(std::vector<int>{0, 0, 1}, scores), 0);
  EXPECT_EQ(aggregate_votes(std::vector<int>{0, 1}, scores), 1);
  EXPECT_EQ(aggregate_votes(std::vector<int>{2, 0}, std::vector<double>{1.0, 0.0, 1.0}), 0);
  EXPECT_EQ(aggregate_votes(std::vector<int>{2}, scores), 2);
}

TEST(Metrics, HandBuiltConfusion) {
  EvalReport r;
  r.confusion = {{3, 1}, {2, 4}};
  compute_metrics(r);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.7);
  const double p0 = 3.0 / 5, r0 = 3.0 / 4, p1 = 4.0 / 5, r1 = 4.0 / 6;
  EXPECT_NEAR(r.per_class_f1[0], 2 * p0 * r0 / (p0 + r0), 1e-15);
  EXPECT_NEAR(r.per_class_f1[1], 2 * p1 * r1 / (p1 + r1), 1e-15);
}

TEST(Metrics, PerfectAndAbsentClass) {
  EvalReport r;
  r.confusion = {{2, 0, 0}, {0, 3, 0}, {0, 0, 0}};
  compute_metrics(r);
  EXPECT_EQ(r.overall_accuracy, 1.0);
  EXPECT_EQ(r.per_class_f1[0], 1.0);
  EXPECT_EQ(r.per_class_f1[1], 1.0);
  EXPECT_EQ(r.per_class_f1[2], 0.0);
}

TEST(Pipeline, EmptySplitsAreErrors) {
  test::TempDir dir("pipe");
  auto m = tiny_dataset(dir.path());
  DatasetManifest no_train = m;
  std::erase_if(no_train.recordings, [](const ManifestEntry& e) { return e.split == Split::train; });
  EXPECT_THROW(run_training(no_train, tiny_params()), InsufficientDataError);
  DatasetManifest no_test = m;
  std::erase_if(no_test.recordings, [](const ManifestEntry& e) { return e.split == Split::test; });
  const auto sys = run_training(no_test, tiny_params());
  EXPECT_THROW(evaluate(no_test, sys.bank, sys.model, tiny_params().protocol, 4), InsufficientDataError);
}

TEST(Pipeline, EveryMethodRunsThroughTheSamePath) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  const FilterMethod methods[] = {FilterMethod::sfa, FilterMethod::pca, FilterMethod::random};
  const auto rows = compare_methods(m, tiny_params(), methods);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& row : rows) {
    EXPECT_EQ(row.report.decisions.size(), m.count(Split::test));
    EXPECT_GE(row.report.overall_accuracy, 0.0);
    EXPECT_EQ(row.report.config.at("method"), to_string(row.method));
  }
}

TEST(Pipeline, SingleWindowDecisionIsThatWindowsPrediction) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  const auto p = tiny_params();
  const auto sys = run_training(m, p);
  const auto rec = m.load(*m.entries(Split::test)[0]);
  const EvalProtocol one{50'000, 50'000, 0};
  const auto d = classify_duration(rec, sys.bank, sys.model, one, p.pool);
  ASSERT_EQ(d.window_labels.size(), 1u);
  EXPECT_EQ(d.label, d.window_labels[0]);
  const auto slab = voxelize_window(rec.events, rec.geometry, p.t_vox, rec.t_first(), p.k);
  EXPECT_EQ(d.label, predict(sys.model, to_tensor(respond(slab, sys.bank, p.pool))).label);
  const auto multi = classify_duration(rec, sys.bank, sys.model, p.protocol, p.pool);
  EXPECT_EQ(multi.window_labels.size(), window_count(200'000, 50'000, 25'000));
}

TEST(Pipeline, DeterministicAcrossRunsAndThreads) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  auto p = tiny_params();
  const auto a = run_training(m, p);
  p.threads = 3;
  const auto b = run_training(m, p);
  EXPECT_EQ(a.bank, b.bank);
  EXPECT_EQ(a.model, b.model);
  const auto ra = evaluate(m, a.bank, a.model, p.protocol, p.pool, 1);
  const auto rb = evaluate(m, b.bank, b.model, p.protocol, p.pool, 3);
  EXPECT_EQ(report_to_json(ra), report_to_json(rb));
}

TEST(Pipeline, TestSplitNeverInfluencesTraining) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  const auto p = tiny_params();
  const auto before = run_training(m, p);
  for (const auto* e : m.entries(Split::test)) {
    EventRecording poison;
    poison.geometry = m.geometry;
    for (int i = 0; i < 5000; ++i) poison.events.push_back({i % 16, (i * 7) % 16, i * 60, 1});
    save_recording(poison, m.resolve(*e));
  }
  const auto after = run_training(m, p);
  EXPECT_EQ(before.bank, after.bank);
  EXPECT_EQ(before.model, after.model);
}

TEST(Pipeline, NoiseSweepZeroDeltaReproducesBaseline) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  const auto p = tiny_params();
  const auto sys = run_training(m, p);
  const std::int64_t deltas[] = {0, 2000, 32000};
  const auto rows = sweep_timestamp_noise(m, sys.bank, sys.model, deltas, p.protocol, p.pool, 5);
  ASSERT_EQ(rows.size(), 3u);
  const auto base = evaluate(m, sys.bank, sys.model, p.protocol, p.pool);
  EXPECT_EQ(report_to_json(rows[0].report), report_to_json(base));
  EXPECT_EQ(rows[2].report.per_class_f1.size(), 2u);
}

TEST(Pipeline, FilterSweepTruncatesOneBank) {
  test::TempDir dir("pipe");
  const auto m = tiny_dataset(dir.path());
  const int counts[] = {1, 3};
  const auto rows = sweep_filter_count(m, tiny_params(), counts);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].n_filters, 1);
  EXPECT_EQ(rows[1].report.config.at("n_filters"), 3);
}

TEST(ResponseShift, ZeroRemovalAndMonotoneInFraction) {
  const auto samples = test::synthetic_rois(6, 25, 1200, 4);
  const auto bank = learn_random(6, 25, 4000, 4, 8);
  for (double s : mean_response_shift(bank, samples, 0.0, 1)) EXPECT_EQ(s, 0.0);
  double prev = 0;
  for (double frac : {0.05, 0.2, 0.5}) {
    const auto s = mean_response_shift(bank, samples, frac, 1);
    const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    EXPECT_GT(mean, prev);
    prev = mean;
  }
  EXPECT_THROW(mean_response_shift(bank, samples, 1.5, 1), PreconditionError);
}

TEST(Params, JsonRoundTrip) {
  PipelineParams p = tiny_params();
  p.method = FilterMethod::pca;
  p.activation = "tanh";
  PipelineParams q;
  params_from_json(params_to_json(p), q);
  EXPECT_EQ(params_to_json(q), params_to_json(p));
  EXPECT_EQ(q.protocol.overlap, 25'000);
}
