// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lmn/checkpoint.hpp"
#include "lmn/experiment.hpp"
#include "lmn/matrix_io.hpp"

namespace lmn {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lmn_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

MetricLog synthetic_log(const std::vector<double>& lmn1, const std::vector<double>& train_acc,
                        const std::vector<double>& test_acc) {
  MetricLog log;
  for (std::size_t i = 0; i < lmn1.size(); ++i) {
    MetricRow r;
    r.step = static_cast<long>(10 * (i + 1));
    r.train_loss = 1.0 / static_cast<double>(i + 1);
    r.test_loss = 2.0 + 0.5 * lmn1[i];
    r.train_acc = train_acc[i];
    r.test_acc = test_acc[i];
    r.lmn_layer0 = lmn1[i] + 1.0;
    r.lmn_layer1 = lmn1[i];
    r.lmn_layer2 = 1.0;
    r.l2_norm = 30.0 - static_cast<double>(i) * static_cast<double>(i);
    log.rows.push_back(r);
  }
  return log;
}

TEST(MetricsCsv, RoundTripIsExact) {
  MetricLog log = synthetic_log({3.0, 1.0 / 3.0, 7.25}, {0.1, 0.5, 1.0}, {0.0, 0.2, 0.9});
  log.rows[1].lmn_layer2 = std::numeric_limits<double>::quiet_NaN();
  std::stringstream ss;
  write_metrics_csv(log, ss);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kMetricsHeader);
  const auto back = read_metrics_csv(ss);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(back.rows[0], log.rows[0]);
  EXPECT_EQ(back.rows[2], log.rows[2]);
  EXPECT_EQ(back.rows[1].lmn_layer1, 1.0 / 3.0);
  EXPECT_TRUE(std::isnan(back.rows[1].lmn_layer2));
}

TEST(MetricsCsv, RejectsMalformedInput) {
  std::istringstream wrong_header("step,foo\n1,2\n");
  EXPECT_THROW(read_metrics_csv(wrong_header), std::invalid_argument);
  std::istringstream short_row(std::string(kMetricsHeader) + "\n1,2,3\n");
  EXPECT_THROW(read_metrics_csv(short_row), std::invalid_argument);
  std::istringstream bad_number(std::string(kMetricsHeader) + "\n1,x,0,0,0,0,0,0,0\n");
  EXPECT_THROW(read_metrics_csv(bad_number), std::invalid_argument);
}

TEST(Phases, PartitionEveryRow) {
  const auto log = synthetic_log({1, 2, 3, 4, 5, 6}, {0.2, 1.0, 1.0, 1.0, 1.0, 1.0}, {0, 0, 0.5, 1.0, 1.0, 1.0});
  const auto p = detect_phases(log);
  EXPECT_EQ(p.memorization_step, 20);
  EXPECT_EQ(p.generalization_step, 40);
  const std::vector<Phase> expected{Phase::Memorizing,   Phase::Generalizing, Phase::Generalizing,
                                    Phase::Finalizing,   Phase::Finalizing,   Phase::Finalizing};
  EXPECT_EQ(p.labels, expected);
}

TEST(Phases, GeneralizationNeverPrecedesMemorization) {
  // A high test accuracy before the train split is fit does not count.
  const auto log = synthetic_log({1, 2, 3}, {0.5, 0.9, 1.0}, {1.0, 1.0, 1.0});
  const auto p = detect_phases(log);
  EXPECT_EQ(p.memorization_step, 30);
  EXPECT_EQ(p.generalization_step, 30);
  EXPECT_THROW(label_phases(log, 30, 20, 1.0), std::invalid_argument);
}

TEST(Phases, NoMemorizationMeansAllMemorizing) {
  const auto log = synthetic_log({1, 2}, {0.1, 0.2}, {0.0, 0.0});
  const auto p = detect_phases(log);
  EXPECT_FALSE(p.memorization_step);
  EXPECT_EQ(p.labels, (std::vector<Phase>{Phase::Memorizing, Phase::Memorizing}));
}

TEST(Correlate, LinearRelationIsOne) {
  const auto log = synthetic_log({9, 8, 7, 6, 5, 4, 3}, {1, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0});
  const auto p = detect_phases(log);
  const auto c = correlate(log, p);
  EXPECT_EQ(c.status, Correlation::Status::Ok);
  EXPECT_EQ(c.rows, 7u);
  EXPECT_NEAR(c.r2_lmn_vs_test_loss, 1.0, 1e-12);
  EXPECT_LT(c.r2_l2_vs_test_loss, 1.0);
}

TEST(Correlate, ConstantTestLossIsDegenerate) {
  auto log = synthetic_log({9, 8, 7, 6, 5, 4, 3}, {1, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0});
  for (auto& r : log.rows) r.test_loss = 1.5;
  const auto c = correlate(log, detect_phases(log));
  EXPECT_EQ(c.status, Correlation::Status::Degenerate);
  EXPECT_TRUE(std::isnan(c.r2_lmn_vs_test_loss));
}

TEST(Correlate, TooFewRows) {
  const auto log = synthetic_log({3, 2, 1}, {1, 1, 1}, {0, 0, 0});
  const auto c = correlate(log, detect_phases(log));
  EXPECT_EQ(c.status, Correlation::Status::InsufficientData);
  EXPECT_EQ(c.rows, 3u);
}

TEST(TurningPoints, FindsStrictExtremaInFinalizingRows) {
  const auto log = synthetic_log({30, 20, 15, 20, 12}, {1, 1, 1, 1, 1}, {1, 1, 1, 1, 1});
  const auto p = detect_phases(log);
  ASSERT_EQ(p.generalization_step, 10);
  const auto tp = detect_turning_points(log, p);
  ASSERT_EQ(tp.size(), 2u);
  EXPECT_EQ(tp[0], (TurningPoint{30, 15.0, false}));
  EXPECT_EQ(tp[1], (TurningPoint{40, 20.0, true}));
  const auto hits = match_turning_points(tp, {15.0, 20.0, 30.0}, 2.0);
  EXPECT_EQ(hits, (std::vector<bool>{true, true, false}));
}

TEST(TurningPoints, MonotoneOrUnfinishedGivesNone) {
  const auto mono = synthetic_log({5, 4, 3, 2, 1}, {1, 1, 1, 1, 1}, {1, 1, 1, 1, 1});
  EXPECT_TRUE(detect_turning_points(mono, detect_phases(mono)).empty());
  const auto early = synthetic_log({1, 5, 1, 5, 1}, {1, 1, 1, 1, 1}, {0, 0, 0, 0, 0});
  EXPECT_TRUE(detect_xor_turning_points(early, detect_phases(early)).empty());
}

TEST(Schedule, LogSpacedStrictlyIncreasingEndingAtSteps) {
  for (long steps : {1L, 2L, 10L, 500L, 20000L}) {
    for (int points : {1, 5, 60}) {
      const auto s = log_spaced_schedule(steps, points);
      ASSERT_FALSE(s.empty());
      EXPECT_EQ(s.front(), points == 1 ? steps : 1);
      EXPECT_EQ(s.back(), steps);
      for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
      EXPECT_LE(s.size(), static_cast<std::size_t>(std::max(points, 1)) + 1);
    }
  }
  EXPECT_THROW(log_spaced_schedule(0, 5), std::invalid_argument);
}

TEST(Config, FormatThenParseReproducesConfig) {
  RunConfig cfg;
  cfg.task.kind = TaskKind::BitwiseXor;
  cfg.task.train_fraction = 0.7;
  cfg.train.learning_rate = 3e-4;
  cfg.train.decay_embeddings = false;
  cfg.probe.sample_cap = 100;
  cfg.metric_schedule = {1, 5, 9};
  cfg.dump_matrix_at = {5};
  cfg.probe_layers = {false, true, false};
  cfg.output_dir = "some/dir";
  const std::string text = format_run_config(cfg);
  std::istringstream is(text);
  RunConfig back;
  for (const auto& [k, v] : parse_config_text(is)) apply_setting(back, k, v);
  EXPECT_EQ(format_run_config(back), text);
  EXPECT_EQ(back.train.learning_rate, 3e-4);
  EXPECT_EQ(back.metric_schedule, (std::vector<long>{1, 5, 9}));
}

TEST(Config, LaterSettingsOverrideEarlierOnes) {
  const fs::path dir = fresh_dir("config");
  fs::create_directories(dir);
  {
    std::ofstream os(dir / "run.cfg");
    os << "# comment\nsteps = 50\nlr = 0.01  # trailing\nweight_decay = 0.5\n";
  }
  RunConfig cfg;
  apply_config_file(cfg, (dir / "run.cfg").string());
  EXPECT_EQ(cfg.train.steps, 50);
  EXPECT_EQ(cfg.train.weight_decay, 0.5);
  apply_setting(cfg, "lr", "0.002");
  EXPECT_EQ(cfg.train.learning_rate, 0.002);
  EXPECT_THROW(apply_setting(cfg, "nonsense", "1"), std::invalid_argument);
  EXPECT_THROW(apply_setting(cfg, "steps", "12x"), std::invalid_argument);
  EXPECT_THROW(apply_config_file(cfg, (dir / "missing.cfg").string()), std::runtime_error);
  std::istringstream bad("steps 50\n");
  EXPECT_THROW(parse_config_text(bad), std::invalid_argument);
}

RunConfig tiny_run(const fs::path& dir) {
  RunConfig cfg;
  cfg.train.steps = 30;
  cfg.metric_schedule = {1, 10, 30};
  cfg.probe.sample_cap = 24;
  cfg.probe.threads = 2;
  cfg.output_dir = dir.string();
  cfg.dump_matrix_at = {30};
  cfg.checkpoint_at = {10};
  cfg.clusters = 3;
  return cfg;
}

TEST(Run, WritesParseableArtifacts) {
  const fs::path dir = fresh_dir("run_smoke");
  const auto res = run(tiny_run(dir));
  ASSERT_EQ(res.log.rows.size(), 3u);
  for (const char* f : {"run_config.txt", "metrics.csv", "timing.csv", "phases.txt", "checkpoint_final.bin",
                        "checkpoint_step10.bin", "matrix_step30_layer1.csv", "matrix_step30_layer1_spectrum.csv",
                        "matrix_step30_layer1_clusters.csv", "matrix_step30_layer1.pgm",
                        "matrix_step30_layer1_sorted.pgm", "accuracy.svg", "loss.svg", "lmn.svg", "l2.svg"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;

  const auto log = load_metrics_csv((dir / "metrics.csv").string());
  EXPECT_EQ(log.rows, res.log.rows);

  const auto ck = load_checkpoint((dir / "checkpoint_step10.bin").string());
  EXPECT_EQ(ck.step, 10u);
  EXPECT_EQ(ck.spec, TaskSpec{});

  std::ifstream mat(dir / "matrix_step30_layer1.csv");
  const auto l = read_matrix_csv(mat);
  EXPECT_EQ(l.size(), 24u);
  EXPECT_EQ(slurp(dir / "matrix_step30_layer1.pgm").substr(0, 2), "P5");
}

TEST(Run, ReproducibleByteForByte) {
  const fs::path a = fresh_dir("run_det_a"), b = fresh_dir("run_det_b");
  auto ca = tiny_run(a);
  auto cb = tiny_run(b);
  cb.probe.threads = 1;
  run(ca);
  run(cb);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint_final.bin"), slurp(b / "checkpoint_final.bin"));
  EXPECT_EQ(slurp(a / "matrix_step30_layer1.csv"), slurp(b / "matrix_step30_layer1.csv"));
}

TEST(Run, PlotsRegenerateIdenticallyFromCsv) {
  const fs::path dir = fresh_dir("run_plots");
  run(tiny_run(dir));
  const auto log = load_metrics_csv((dir / "metrics.csv").string());
  for (const auto& [name, svg] : render_plots(log)) EXPECT_EQ(svg, slurp(dir / name)) << name;
}

TEST(Run, UnwritableOutputFailsBeforeTraining) {
  RunConfig cfg = tiny_run("/proc/lmn_no_such_dir/out");
  EXPECT_THROW(run(cfg), std::runtime_error);
}

TEST(Run, InvalidConfigIsRejected) {
  RunConfig cfg;
  cfg.train.steps = 10;
  cfg.metric_schedule = {5, 3};
  EXPECT_THROW(run(cfg), std::invalid_argument);
  cfg.metric_schedule = {11};
  EXPECT_THROW(run(cfg), std::invalid_argument);
}

TEST(Run, PhaseLabelsCoverAllRows) {
  RunConfig cfg;
  cfg.train.steps = 260;
  cfg.metric_points = 12;
  cfg.probe_layers = {false, false, false};
  const auto res = run(cfg);
  ASSERT_EQ(res.phases.labels.size(), res.log.rows.size());
  ASSERT_TRUE(res.phases.memorization_step);
  for (std::size_t i = 0; i < res.log.rows.size(); ++i) {
    const bool after = res.log.rows[i].step >= *res.phases.memorization_step;
    EXPECT_EQ(res.phases.labels[i] != Phase::Memorizing, after);
    EXPECT_TRUE(std::isnan(res.log.rows[i].lmn_layer1));
  }
}

}  // namespace
}  // namespace lmn
