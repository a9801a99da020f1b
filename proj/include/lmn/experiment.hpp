// SPDX-License-Identifier: Apache-2.0
//
// Training harness: full-batch training with scheduled metric snapshots
// (losses, accuracies, per-layer LMN, parameter L2 norm), phase detection,
// LMN/L2 versus test-loss correlations and artifact output.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lmn/checkpoint.hpp"
#include "lmn/linalg.hpp"
#include "lmn/lmn_metric.hpp"
#include "lmn/matrix_io.hpp"
#include "lmn/mlp.hpp"
#include "lmn/spectral.hpp"
#include "lmn/svg_plot.hpp"
#include "lmn/tasks.hpp"

namespace lmn {

// ---------------------------------------------------------------------------
// Metric log

struct MetricRow {
  long step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double lmn_layer0 = 0.0;
  double lmn_layer1 = 0.0;
  double lmn_layer2 = 0.0;
  double l2_norm = 0.0;

  double lmn_at(int layer) const {
    switch (layer) {
      case 0: return lmn_layer0;
      case 1: return lmn_layer1;
      case 2: return lmn_layer2;
    }
    throw std::invalid_argument("lmn_at: layer must be 0, 1 or 2");
  }

  bool operator==(const MetricRow&) const = default;
};

/// Rows plus wall-clock timings. Timings are kept apart from the rows so that
/// metrics.csv is a deterministic function of the configuration.
struct MetricLog {
  std::vector<MetricRow> rows;
  std::vector<double> wall_time_s;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,test_loss,train_acc,test_acc,lmn_layer0,lmn_layer1,lmn_layer2,l2_norm";

inline void write_metrics_csv(const MetricLog& log, std::ostream& os) {
  os << kMetricsHeader << '\n';
  for (const MetricRow& r : log.rows) {
    os << r.step;
    for (double v : {r.train_loss, r.test_loss, r.train_acc, r.test_acc, r.lmn_layer0, r.lmn_layer1, r.lmn_layer2,
                     r.l2_norm})
      os << ',' << format_double(v);
    os << '\n';
  }
}

inline MetricLog read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw std::invalid_argument("metrics.csv: unexpected header (expected '" + std::string(kMetricsHeader) + "')");
  MetricLog log;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 9) throw std::invalid_argument("metrics.csv: line " + std::to_string(lineno) + " has wrong arity");
    MetricRow r;
    r.step = std::stol(cells[0]);
    double* fields[] = {&r.train_loss, &r.test_loss, &r.train_acc, &r.test_acc, &r.lmn_layer0,
                        &r.lmn_layer1, &r.lmn_layer2, &r.l2_norm};
    for (std::size_t i = 0; i < 8; ++i) *fields[i] = parse_double(cells[i + 1]);
    log.rows.push_back(r);
  }
  return log;
}

inline MetricLog load_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return read_metrics_csv(is);
}

// ---------------------------------------------------------------------------
// Phases

enum class Phase { Memorizing, Generalizing, Finalizing };

inline std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Memorizing: return "memorizing";
    case Phase::Generalizing: return "generalizing";
    case Phase::Finalizing: return "finalizing";
  }
  return "?";
}

struct PhaseReport {
  std::optional<long> memorization_step;
  std::optional<long> generalization_step;
  double generalization_threshold = 1.0;
  std::vector<Phase> labels;  // one per metric row
};

inline Phase phase_at(long step, std::optional<long> mem, std::optional<long> gen) {
  if (!mem || step < *mem) return Phase::Memorizing;
  if (!gen || step < *gen) return Phase::Generalizing;
  return Phase::Finalizing;
}

inline PhaseReport label_phases(const MetricLog& log, std::optional<long> mem, std::optional<long> gen, double threshold) {
  if (mem && gen && *gen < *mem) throw std::invalid_argument("label_phases: generalization precedes memorization");
  PhaseReport p{mem, gen, threshold, {}};
  p.labels.reserve(log.rows.size());
  for (const MetricRow& r : log.rows) p.labels.push_back(phase_at(r.step, mem, gen));
  return p;
}

/// Phases at the resolution of the logged rows. Generalization is the first
/// row at or after memorization whose test accuracy reaches the threshold.
inline PhaseReport detect_phases(const MetricLog& log, double threshold = 1.0) {
  std::optional<long> mem, gen;
  for (const MetricRow& r : log.rows) {
    if (!mem && r.train_acc >= 1.0) mem = r.step;
    if (mem && !gen && r.test_acc >= threshold) gen = r.step;
  }
  return label_phases(log, mem, gen, threshold);
}

// ---------------------------------------------------------------------------
// Correlations and turning points

struct Correlation {
  enum class Status { Ok, InsufficientData, Degenerate };
  Status status = Status::InsufficientData;
  std::size_t rows = 0;
  double r2_lmn_vs_test_loss = std::numeric_limits<double>::quiet_NaN();
  double r2_l2_vs_test_loss = std::numeric_limits<double>::quiet_NaN();
};

inline std::string_view to_string(Correlation::Status s) {
  switch (s) {
    case Correlation::Status::Ok: return "ok";
    case Correlation::Status::InsufficientData: return "insufficient-data";
    case Correlation::Status::Degenerate: return "degenerate";
  }
  return "?";
}

inline constexpr std::size_t kMinCorrelationRows = 5;

/// r^2 of lmn_layer1 and of l2_norm against test loss over the rows labelled `phase`.
inline Correlation correlate(const MetricLog& log, const PhaseReport& phases, Phase phase = Phase::Generalizing,
                             int layer = 1) {
  if (phases.labels.size() != log.rows.size()) throw std::invalid_argument("correlate: phase labels do not match log");
  std::vector<double> lmn, l2, loss;
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    if (phases.labels[i] != phase) continue;
    lmn.push_back(log.rows[i].lmn_at(layer));
    l2.push_back(log.rows[i].l2_norm);
    loss.push_back(log.rows[i].test_loss);
  }
  Correlation c;
  c.rows = lmn.size();
  if (c.rows < kMinCorrelationRows) return c;

  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  c.status = (constant(lmn) || constant(l2) || constant(loss)) ? Correlation::Status::Degenerate : Correlation::Status::Ok;
  if (!constant(loss)) {
    c.r2_lmn_vs_test_loss = pearson_r2(lmn, loss);
    c.r2_l2_vs_test_loss = pearson_r2(l2, loss);
  }
  return c;
}

struct TurningPoint {
  long step = 0;
  double lmn = 0.0;
  bool is_maximum = false;
  bool operator==(const TurningPoint&) const = default;
};

/// Strict local extrema (3-point window over consecutive logged rows) of the
/// layer LMN curve, restricted to finalizing-phase rows.
inline std::vector<TurningPoint> detect_turning_points(const MetricLog& log, const PhaseReport& phases, int layer = 1) {
  if (phases.labels.size() != log.rows.size())
    throw std::invalid_argument("detect_turning_points: phase labels do not match log");
  std::vector<const MetricRow*> rows;
  for (std::size_t i = 0; i < log.rows.size(); ++i)
    if (phases.labels[i] == Phase::Finalizing) rows.push_back(&log.rows[i]);
  std::vector<TurningPoint> out;
  for (std::size_t i = 1; i + 1 < rows.size(); ++i) {
    const double a = rows[i - 1]->lmn_at(layer), b = rows[i]->lmn_at(layer), c = rows[i + 1]->lmn_at(layer);
    if (b > a && b > c) out.push_back({rows[i]->step, b, true});
    if (b < a && b < c) out.push_back({rows[i]->step, b, false});
  }
  return out;
}

inline std::vector<TurningPoint> detect_xor_turning_points(const MetricLog& log, const PhaseReport& phases) {
  return detect_turning_points(log, phases, 1);
}

/// For each target value, whether some turning point lies within `tolerance` of it.
inline std::vector<bool> match_turning_points(const std::vector<TurningPoint>& points, const std::vector<double>& targets,
                                              double tolerance) {
  std::vector<bool> hit;
  for (double t : targets)
    hit.push_back(std::any_of(points.begin(), points.end(), [&](const TurningPoint& p) { return std::abs(p.lmn - t) <= tolerance; }));
  return hit;
}

// ---------------------------------------------------------------------------
// Configuration

/// Log-spaced integer steps in [1, steps], deduplicated, always ending at `steps`.
inline std::vector<long> log_spaced_schedule(long steps, int points) {
  if (steps < 1) throw std::invalid_argument("log_spaced_schedule: steps must be >= 1");
  if (points < 1) throw std::invalid_argument("log_spaced_schedule: points must be >= 1");
  std::vector<long> s;
  const double top = std::log(static_cast<double>(steps));
  for (int i = 0; i < points; ++i) {
    const double f = points == 1 ? 1.0 : static_cast<double>(i) / (points - 1);
    const long v = std::clamp(std::lround(std::exp(top * f)), 1L, steps);
    if (s.empty() || v > s.back()) s.push_back(v);
  }
  if (s.back() != steps) s.push_back(steps);
  return s;
}

struct RunConfig {
  TaskSpec task;
  TrainConfig train;
  ProbeConfig probe;
  int metric_points = 60;
  std::vector<long> metric_schedule;  // empty: log-spaced with metric_points
  std::string output_dir;             // empty: nothing is written
  std::vector<long> dump_matrix_at;
  std::vector<long> checkpoint_at;
  double generalization_threshold = 1.0;
  std::array<bool, 3> probe_layers{true, true, true};
  int clusters = 10;
  bool write_plots = true;

  std::vector<long> schedule() const {
    return metric_schedule.empty() ? log_spaced_schedule(train.steps, metric_points) : metric_schedule;
  }
};

inline void validate(const RunConfig& cfg) {
  validate(cfg.task);
  validate(cfg.train);
  validate(cfg.probe);
  const auto s = cfg.schedule();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 1 || s[i] > cfg.train.steps) throw std::invalid_argument("metric schedule entry outside [1, steps]");
    if (i > 0 && s[i] <= s[i - 1]) throw std::invalid_argument("metric schedule must be strictly increasing");
  }
  if (!(cfg.generalization_threshold > 0.0 && cfg.generalization_threshold <= 1.0))
    throw std::invalid_argument("generalization threshold must lie in (0, 1]");
  if (cfg.clusters < 2) throw std::invalid_argument("clusters must be >= 2");
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<long> parse_long_list(const std::string& v) {
  std::vector<long> out;
  for (const auto& cell : split_csv_line(v)) {
    const auto t = trim(cell);
    if (t.empty()) continue;
    std::size_t used = 0;
    const long x = std::stol(t, &used);
    if (used != t.size()) throw std::invalid_argument("bad integer '" + t + "'");
    out.push_back(x);
  }
  return out;
}

inline std::string join(const std::vector<long>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw std::invalid_argument("bad boolean '" + v + "'");
}

inline long parse_long(const std::string& v) {
  std::size_t used = 0;
  const long x = std::stol(v, &used);
  if (used != v.size()) throw std::invalid_argument("bad integer '" + v + "'");
  return x;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::size_t used = 0;
  const auto x = std::stoull(v, &used);
  if (used != v.size() || v.starts_with('-')) throw std::invalid_argument("bad unsigned integer '" + v + "'");
  return x;
}

inline ProbeSet parse_probe_set(const std::string& v) {
  if (v == "train") return ProbeSet::Train;
  if (v == "test") return ProbeSet::Test;
  if (v == "all") return ProbeSet::All;
  throw std::invalid_argument("probe set must be train, test or all");
}

inline std::string_view to_string(ProbeSet s) {
  switch (s) {
    case ProbeSet::Train: return "train";
    case ProbeSet::Test: return "test";
    case ProbeSet::All: return "all";
  }
  return "?";
}

}  // namespace detail

/// Applies one `key = value` setting. Keys match the CLI flag names without
/// the leading dashes; underscores are accepted in place of hyphens.
inline void apply_setting(RunConfig& cfg, std::string key, const std::string& raw) {
  std::replace(key.begin(), key.end(), '_', '-');
  const std::string v = detail::trim(raw);
  try {
    if (key == "task") cfg.task.kind = parse_task_kind(v);
    else if (key == "modulus") cfg.task.modulus = static_cast<int>(detail::parse_long(v));
    else if (key == "digits") cfg.task.digits = static_cast<int>(detail::parse_long(v));
    else if (key == "train-fraction") cfg.task.train_fraction = parse_double(v);
    else if (key == "split-seed") cfg.task.split_seed = detail::parse_u64(v);
    else if (key == "steps") cfg.train.steps = static_cast<int>(detail::parse_long(v));
    else if (key == "lr") cfg.train.learning_rate = parse_double(v);
    else if (key == "weight-decay") cfg.train.weight_decay = parse_double(v);
    else if (key == "beta1") cfg.train.beta1 = parse_double(v);
    else if (key == "beta2") cfg.train.beta2 = parse_double(v);
    else if (key == "adam-eps") cfg.train.epsilon = parse_double(v);
    else if (key == "seed") cfg.train.init_seed = detail::parse_u64(v);
    else if (key == "init-scale") cfg.train.init_scale = parse_double(v);
    else if (key == "decay-embeddings") cfg.train.decay_embeddings = detail::parse_bool(v);
    else if (key == "batch-size") cfg.train.batch_size = static_cast<std::size_t>(detail::parse_u64(v));
    else if (key == "probe-seed") cfg.probe.sample_seed = detail::parse_u64(v);
    else if (key == "sample-cap") cfg.probe.sample_cap = static_cast<std::size_t>(detail::parse_u64(v));
    else if (key == "num-lambda") cfg.probe.num_lambda = static_cast<int>(detail::parse_long(v));
    else if (key == "probe-set") cfg.probe.probe_set = detail::parse_probe_set(v);
    else if (key == "dump-layer") cfg.probe.layer_index = static_cast<int>(detail::parse_long(v));
    else if (key == "threads") cfg.probe.threads = static_cast<unsigned>(detail::parse_u64(v));
    else if (key == "metric-points") cfg.metric_points = static_cast<int>(detail::parse_long(v));
    else if (key == "metric-schedule") cfg.metric_schedule = detail::parse_long_list(v);
    else if (key == "out") cfg.output_dir = v;
    else if (key == "dump-matrix-at") cfg.dump_matrix_at = detail::parse_long_list(v);
    else if (key == "checkpoint-at") cfg.checkpoint_at = detail::parse_long_list(v);
    else if (key == "gen-threshold") cfg.generalization_threshold = parse_double(v);
    else if (key == "clusters") cfg.clusters = static_cast<int>(detail::parse_long(v));
    else if (key == "plots") cfg.write_plots = detail::parse_bool(v);
    else if (key == "probe-layers") {
      cfg.probe_layers = {false, false, false};
      for (long l : detail::parse_long_list(v)) {
        if (l < 0 || l > 2) throw std::invalid_argument("probe layers must be 0, 1 or 2");
        cfg.probe_layers[static_cast<std::size_t>(l)] = true;
      }
    } else {
      throw std::invalid_argument("unknown setting");
    }
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("setting '" + key + "' = '" + v + "': " + e.what());
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("setting '" + key + "' = '" + v + "': value out of range");
  }
}

/// `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return out;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file '" + path + "'");
  for (const auto& [k, v] : parse_config_text(is)) apply_setting(cfg, k, v);
}

/// Every setting of `cfg` in config-file form; applying it to a default
/// RunConfig reproduces `cfg`.
inline std::string format_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("task", std::string(to_string(cfg.task.kind)));
  kv("modulus", std::to_string(cfg.task.modulus));
  kv("digits", std::to_string(cfg.task.digits));
  kv("train-fraction", format_double(cfg.task.train_fraction));
  kv("split-seed", std::to_string(cfg.task.split_seed));
  kv("steps", std::to_string(cfg.train.steps));
  kv("lr", format_double(cfg.train.learning_rate));
  kv("weight-decay", format_double(cfg.train.weight_decay));
  kv("beta1", format_double(cfg.train.beta1));
  kv("beta2", format_double(cfg.train.beta2));
  kv("adam-eps", format_double(cfg.train.epsilon));
  kv("seed", std::to_string(cfg.train.init_seed));
  kv("init-scale", format_double(cfg.train.init_scale));
  kv("decay-embeddings", cfg.train.decay_embeddings ? "true" : "false");
  kv("batch-size", std::to_string(cfg.train.batch_size));
  kv("probe-seed", std::to_string(cfg.probe.sample_seed));
  kv("sample-cap", std::to_string(cfg.probe.sample_cap));
  kv("num-lambda", std::to_string(cfg.probe.num_lambda));
  kv("probe-set", std::string(detail::to_string(cfg.probe.probe_set)));
  kv("dump-layer", std::to_string(cfg.probe.layer_index));
  kv("threads", std::to_string(cfg.probe.threads));
  kv("metric-points", std::to_string(cfg.metric_points));
  if (!cfg.metric_schedule.empty()) kv("metric-schedule", detail::join(cfg.metric_schedule));
  if (!cfg.output_dir.empty()) kv("out", cfg.output_dir);
  if (!cfg.dump_matrix_at.empty()) kv("dump-matrix-at", detail::join(cfg.dump_matrix_at));
  if (!cfg.checkpoint_at.empty()) kv("checkpoint-at", detail::join(cfg.checkpoint_at));
  kv("gen-threshold", format_double(cfg.generalization_threshold));
  kv("clusters", std::to_string(cfg.clusters));
  kv("plots", cfg.write_plots ? "true" : "false");
  std::vector<long> layers;
  for (long l = 0; l < 3; ++l)
    if (cfg.probe_layers[static_cast<std::size_t>(l)]) layers.push_back(l);
  kv("probe-layers", detail::join(layers));
  return os.str();
}

// ---------------------------------------------------------------------------
// Artifacts

/// accuracy.svg, loss.svg, lmn.svg and l2.svg. Depends only on log.rows.
inline std::vector<std::pair<std::string, std::string>> render_plots(const MetricLog& log) {
  std::vector<double> steps;
  for (const auto& r : log.rows) steps.push_back(static_cast<double>(r.step));
  auto column = [&](double MetricRow::*f) {
    std::vector<double> v;
    for (const auto& r : log.rows) v.push_back(r.*f);
    return v;
  };
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("accuracy.svg",
                   render_line_plot({"Accuracy", "step", "accuracy", true, false},
                                    {{"train", "#1f77b4", steps, column(&MetricRow::train_acc)},
                                     {"test", "#d62728", steps, column(&MetricRow::test_acc)}}));
  out.emplace_back("loss.svg", render_line_plot({"Cross-entropy loss", "step", "loss", true, true},
                                                {{"train", "#1f77b4", steps, column(&MetricRow::train_loss)},
                                                 {"test", "#d62728", steps, column(&MetricRow::test_loss)}}));
  out.emplace_back("lmn.svg", render_line_plot({"Linear mapping number", "step", "LMN", true, false},
                                               {{"embedding", "#2ca02c", steps, column(&MetricRow::lmn_layer0)},
                                                {"hidden 1", "#ff7f0e", steps, column(&MetricRow::lmn_layer1)},
                                                {"hidden 2", "#9467bd", steps, column(&MetricRow::lmn_layer2)}}));
  out.emplace_back("l2.svg", render_line_plot({"Parameter L2 norm", "step", "L2 norm", true, false},
                                              {{"L2", "#8c564b", steps, column(&MetricRow::l2_norm)}}));
  return out;
}

namespace detail {

inline void write_text_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << content;
  if (!os) throw std::runtime_error("write failed for '" + p.string() + "'");
}

template <typename F>
void write_with(const std::filesystem::path& p, F&& f) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  f(os);
  if (!os) throw std::runtime_error("write failed for '" + p.string() + "'");
}

}  // namespace detail

inline void write_plots(const MetricLog& log, const std::filesystem::path& dir) {
  for (const auto& [name, svg] : render_plots(log)) detail::write_text_file(dir / name, svg);
}

inline std::string format_phase_report(const MetricLog& log, const PhaseReport& p) {
  std::ostringstream os;
  auto opt = [](std::optional<long> v) { return v ? std::to_string(*v) : std::string("none"); };
  os << "memorization_step = " << opt(p.memorization_step) << '\n';
  os << "generalization_step = " << opt(p.generalization_step) << '\n';
  os << "generalization_threshold = " << format_double(p.generalization_threshold) << '\n';
  std::array<std::size_t, 3> counts{};
  for (Phase ph : p.labels) ++counts[static_cast<std::size_t>(ph)];
  os << "memorizing_rows = " << counts[0] << '\n';
  os << "generalizing_rows = " << counts[1] << '\n';
  os << "finalizing_rows = " << counts[2] << '\n';
  os << "\nstep,phase\n";
  for (std::size_t i = 0; i < log.rows.size() && i < p.labels.size(); ++i)
    os << log.rows[i].step << ',' << to_string(p.labels[i]) << '\n';
  return os.str();
}

/// Connectivity CSV, spectrum, spectral clustering and graymaps for one report.
inline void write_matrix_dump(const LmnReport& report, std::size_t clusters, std::uint64_t seed,
                              const std::filesystem::path& dir, const std::string& stem) {
  const std::size_t k = std::clamp<std::size_t>(clusters, 2, report.connectivity.size());
  const SpectralClustering sc = spectral_reorder(report.connectivity, k, seed);
  detail::write_with(dir / (stem + ".csv"), [&](std::ostream& os) { write_matrix_csv(report.connectivity, os); });
  detail::write_with(dir / (stem + "_spectrum.csv"), [&](std::ostream& os) { write_spectrum_csv(report.spectrum, os); });
  detail::write_with(dir / (stem + "_clusters.csv"),
                     [&](std::ostream& os) { write_clusters_csv(sc, report.sample_indices, os); });
  detail::write_with(dir / (stem + ".pgm"), [&](std::ostream& os) { write_pgm(report.connectivity, os); });
  detail::write_with(dir / (stem + "_sorted.pgm"), [&](std::ostream& os) { write_pgm(report.connectivity, os, sc.permutation); });
}

// ---------------------------------------------------------------------------
// Run

struct RunResult {
  MetricLog log;
  PhaseReport phases;  // first-hit steps tracked at every training step
  std::array<double, 3> max_negative_eigenvalue_mass{};  // per layer, over all snapshots
};

namespace detail {

inline std::string checkpoint_name(long step) { return "checkpoint_step" + std::to_string(step) + ".bin"; }

inline bool contains(const std::vector<long>& v, long x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace detail

/// Trains for cfg.train.steps full-batch AdamW steps and records a metric row
/// after every scheduled step. Memorization and generalization steps are
/// detected at single-step resolution. Deterministic given the seeds.
inline RunResult run(const RunConfig& cfg, std::ostream* progress = nullptr) {
  validate(cfg);
  namespace fs = std::filesystem;
  const bool write = !cfg.output_dir.empty();
  const fs::path out(cfg.output_dir);
  if (write) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    detail::write_text_file(out / "run_config.txt", format_run_config(cfg));
  }

  const TaskDataset ds = generate(cfg.task);
  const auto train_ex = examples_for(ds, ds.train_indices);
  const auto test_ex = examples_for(ds, ds.test_indices);
  const auto schedule = cfg.schedule();

  MlpModel model = init_model(cfg.task, cfg.train);
  MlpModel previous = model;
  AdamState opt = AdamState::for_model(model);

  RunResult result;
  std::optional<long> mem, gen;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  const bool minibatch = cfg.train.batch_size > 0 && cfg.train.batch_size < train_ex.size();
  Rng batch_rng(cfg.train.init_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> batch_order(train_ex.size());
  std::size_t batch_cursor = train_ex.size();

  auto save_metrics = [&] {
    if (!write) return;
    detail::write_with(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(result.log, os); });
    detail::write_with(out / "timing.csv", [&](std::ostream& os) {
      os << "step,wall_time_s\n";
      for (std::size_t i = 0; i < result.log.rows.size(); ++i)
        os << result.log.rows[i].step << ',' << format_double(result.log.wall_time_s[i]) << '\n';
    });
  };
  // `good` is the most recent model known to evaluate finitely.
  auto fail = [&](const std::string& what, long step, const MlpModel& good, long good_step) {
    if (write) {
      save_checkpoint({cfg.task, good, static_cast<std::uint64_t>(std::max(0L, good_step))},
                      (out / "checkpoint_last_good.bin").string());
      save_metrics();
    }
    throw NonFiniteError(what + " (step " + std::to_string(step) + ")");
  };
  // Full-batch training evaluates model_{s-1} at step s; that evaluation also
  // settles whether model_{s-1} memorized the train split.
  auto note_train_acc = [&](long step, std::size_t correct) {
    if (!mem && correct == train_ex.size()) mem = step;
  };
  auto note_test_acc = [&](long step) {
    if (mem && !gen && *mem <= step) {
      const auto r = evaluate_batch(model, test_ex, false);
      if (static_cast<double>(r.correct) / static_cast<double>(test_ex.size()) >= cfg.generalization_threshold) gen = step;
    }
  };

  std::size_t next_metric = 0;
  for (long step = 1; step <= cfg.train.steps; ++step) {
    BatchResult br;
    if (minibatch) {
      if (batch_cursor + cfg.train.batch_size > train_ex.size()) {
        for (std::size_t i = 0; i < batch_order.size(); ++i) batch_order[i] = i;
        batch_rng.shuffle(std::span<std::size_t>(batch_order));
        batch_cursor = 0;
      }
      std::vector<Example> batch;
      for (std::size_t i = 0; i < cfg.train.batch_size; ++i) batch.push_back(train_ex[batch_order[batch_cursor + i]]);
      batch_cursor += cfg.train.batch_size;
      br = evaluate_batch(model, batch, true);
    } else {
      br = evaluate_batch(model, train_ex, true);
      if (step > 1) {
        note_train_acc(step - 1, br.correct);
        note_test_acc(step - 1);
      }
    }
    if (!std::isfinite(br.loss)) fail("non-finite training loss", step, previous, step - 2);
    previous = model;
    try {
      adamw_step(model, br.grads, opt, cfg.train);
    } catch (const NonFiniteError& e) {
      fail(e.what(), step, previous, step - 1);
    }

    const bool last = step == cfg.train.steps;
    const bool scheduled = next_metric < schedule.size() && schedule[next_metric] == step;
    BatchResult train_eval;
    if (minibatch || last || scheduled) {
      train_eval = evaluate_batch(model, train_ex, false);
      if (!std::isfinite(train_eval.loss)) fail("non-finite training loss", step, previous, step - 1);
    }
    if (minibatch || last) {
      note_train_acc(step, train_eval.correct);
      note_test_acc(step);
    }

    std::optional<LmnReport> dump_report;
    if (scheduled) {
      ++next_metric;
      const auto test_eval = evaluate_batch(model, test_ex, false);
      MetricRow row;
      row.step = step;
      row.train_loss = train_eval.loss;
      row.test_loss = test_eval.loss;
      row.train_acc = static_cast<double>(train_eval.correct) / static_cast<double>(train_ex.size());
      row.test_acc = static_cast<double>(test_eval.correct) / static_cast<double>(test_ex.size());
      double* lmn_cols[] = {&row.lmn_layer0, &row.lmn_layer1, &row.lmn_layer2};
      for (int layer = 0; layer < 3; ++layer) {
        if (!cfg.probe_layers[static_cast<std::size_t>(layer)]) {
          *lmn_cols[layer] = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        LmnReport rep = lmn_at_layer(model, ds, layer, cfg.probe);
        *lmn_cols[layer] = rep.lmn;
        auto& worst = result.max_negative_eigenvalue_mass[static_cast<std::size_t>(layer)];
        worst = std::max(worst, rep.negative_eigenvalue_mass);
        if (progress && rep.negative_eigenvalue_mass >= 0.05)
          *progress << "  warning: step " << step << " layer " << layer << " negative eigenvalue mass "
                    << rep.negative_eigenvalue_mass << '\n';
        if (layer == cfg.probe.layer_index) dump_report = std::move(rep);
      }
      row.l2_norm = l2_norm(model);
      result.log.rows.push_back(row);
      result.log.wall_time_s.push_back(elapsed());
      if (progress) {
        *progress << "step " << step << "  train_loss " << row.train_loss << "  test_loss " << row.test_loss
                  << "  train_acc " << row.train_acc << "  test_acc " << row.test_acc << "  lmn " << row.lmn_layer0
                  << " / " << row.lmn_layer1 << " / " << row.lmn_layer2 << "  l2 " << row.l2_norm << "  ("
                  << elapsed() << " s)" << std::endl;
      }
      save_metrics();
    }

    if (write && detail::contains(cfg.dump_matrix_at, step)) {
      if (!dump_report) dump_report = lmn_at_layer(model, ds, cfg.probe.layer_index, cfg.probe);
      write_matrix_dump(*dump_report, static_cast<std::size_t>(cfg.clusters), cfg.probe.sample_seed, out,
                        "matrix_step" + std::to_string(step) + "_layer" + std::to_string(cfg.probe.layer_index));
    }
    if (write && detail::contains(cfg.checkpoint_at, step))
      save_checkpoint({cfg.task, model, static_cast<std::uint64_t>(step)}, (out / detail::checkpoint_name(step)).string());
  }

  result.phases = label_phases(result.log, mem, gen, cfg.generalization_threshold);
  if (write) {
    save_metrics();
    save_checkpoint({cfg.task, model, static_cast<std::uint64_t>(cfg.train.steps)}, (out / "checkpoint_final.bin").string());
    detail::write_text_file(out / "phases.txt", format_phase_report(result.log, result.phases));
    if (cfg.write_plots) write_plots(result.log, out);
  }
  return result;
}

}  // namespace lmn
