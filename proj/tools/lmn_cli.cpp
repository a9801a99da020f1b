// SPDX-License-Identifier: Apache-2.0
//
// lmn: train grokking MLPs, measure their linear mapping number, analyze
// metric logs and dump connectivity matrices.

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lmn/checkpoint.hpp"
#include "lmn/experiment.hpp"
#include "lmn/lmn_metric.hpp"
#include "lmn/tasks.hpp"

namespace {

struct Setting {
  const char* key;
  const char* help;
};

// Flags of `run`; each maps onto a config-file key of the same name.
constexpr Setting kRunSettings[] = {
    {"task", "add | s4 | xor"},
    {"modulus", "modulus for the add task (default 31)"},
    {"digits", "bit width for the xor task (default 5)"},
    {"train-fraction", "train share of all pairs (default 0.8)"},
    {"steps", "training steps (default 20000)"},
    {"lr", "AdamW learning rate (default 1e-3)"},
    {"weight-decay", "decoupled weight decay (default 0.2)"},
    {"seed", "initialization seed"},
    {"split-seed", "train/test split seed"},
    {"probe-seed", "seed for the LMN probe subsample and clustering"},
    {"sample-cap", "maximum probe samples per LMN measurement (default 512)"},
    {"num-lambda", "interpolation points per pair (default 21)"},
    {"probe-set", "train | test | all (default train)"},
    {"probe-layers", "comma list of layers to probe (default 0,1,2)"},
    {"metric-points", "approximate number of log-spaced metric rows (default 60)"},
    {"metric-schedule", "explicit comma list of metric steps"},
    {"gen-threshold", "test accuracy that marks generalization (default 1)"},
    {"init-scale", "multiplier on the initialization scale (default 1)"},
    {"batch-size", "minibatch size, 0 = full batch (default 0)"},
    {"decay-embeddings", "apply weight decay to embeddings (default true)"},
    {"dump-matrix-at", "comma list of steps at which to dump the connectivity matrix"},
    {"dump-layer", "layer used for matrix dumps (default 1)"},
    {"checkpoint-at", "comma list of steps at which to save checkpoints"},
    {"clusters", "spectral clusters for matrix dumps (default 10)"},
    {"threads", "worker threads for LMN probes, 0 = all cores"},
    {"plots", "write SVG plots (default true)"},
    {"out", "output directory"},
};

int do_run(const std::string& config_path, const std::map<std::string, CLI::Option*>& opts,
           const std::map<std::string, std::string>& values, bool quiet) {
  lmn::RunConfig cfg;
  if (!config_path.empty()) lmn::apply_config_file(cfg, config_path);
  for (const auto& [key, opt] : opts)
    if (opt->count() > 0) lmn::apply_setting(cfg, key, values.at(key));
  if (cfg.output_dir.empty()) throw std::invalid_argument("run: --out (or `out` in the config file) is required");

  const lmn::RunResult res = lmn::run(cfg, quiet ? nullptr : &std::cout);
  auto opt_str = [](std::optional<long> v) { return v ? std::to_string(*v) : std::string("none"); };
  std::cout << "memorization_step = " << opt_str(res.phases.memorization_step) << '\n'
            << "generalization_step = " << opt_str(res.phases.generalization_step) << '\n'
            << "outputs written to " << cfg.output_dir << '\n';
  return 0;
}

int do_analyze(const std::string& metrics, double threshold, int layer, const std::string& plots_dir,
               std::vector<double> targets, double tolerance) {
  const lmn::MetricLog log = lmn::load_metrics_csv(metrics);
  const lmn::PhaseReport phases = lmn::detect_phases(log, threshold);
  std::cout << lmn::format_phase_report(log, phases).substr(0, lmn::format_phase_report(log, phases).find("\nstep,"))
            << '\n';

  const lmn::Correlation c = lmn::correlate(log, phases, lmn::Phase::Generalizing, layer);
  std::cout << "correlation_status = " << lmn::to_string(c.status) << '\n'
            << "correlation_rows = " << c.rows << '\n'
            << "r2_lmn_vs_test_loss = " << lmn::format_double(c.r2_lmn_vs_test_loss) << '\n'
            << "r2_l2_vs_test_loss = " << lmn::format_double(c.r2_l2_vs_test_loss) << '\n';

  const auto tps = lmn::detect_turning_points(log, phases, layer);
  std::cout << "turning_points = " << tps.size() << '\n';
  for (const auto& tp : tps)
    std::cout << "  step " << tp.step << ' ' << (tp.is_maximum ? "max" : "min") << ' ' << lmn::format_double(tp.lmn)
              << '\n';
  const auto hits = lmn::match_turning_points(tps, targets, tolerance);
  for (std::size_t i = 0; i < targets.size(); ++i)
    std::cout << "turning_point_near_" << lmn::format_double(targets[i]) << " = " << (hits[i] ? "yes" : "no") << '\n';

  if (!plots_dir.empty()) {
    std::filesystem::create_directories(plots_dir);
    lmn::write_plots(log, plots_dir);
    std::cout << "plots written to " << plots_dir << '\n';
  }
  return 0;
}

int do_dump(const std::string& checkpoint, const std::string& out, lmn::ProbeConfig probe, int clusters,
            const std::string& probe_set) {
  const lmn::Checkpoint ck = lmn::load_checkpoint(checkpoint);
  const lmn::TaskDataset ds = lmn::generate(ck.spec);
  if (ck.model.shape.vocab != ds.vocab) throw std::runtime_error("checkpoint model does not match its task");
  if (probe_set == "test") probe.probe_set = lmn::ProbeSet::Test;
  else if (probe_set == "all") probe.probe_set = lmn::ProbeSet::All;
  else if (probe_set != "train") throw std::invalid_argument("--probe-set must be train, test or all");

  const lmn::LmnReport rep = lmn::lmn_at_layer(ck.model, ds, probe.layer_index, probe);
  std::filesystem::create_directories(out);
  const std::string stem = "matrix_step" + std::to_string(ck.step) + "_layer" + std::to_string(probe.layer_index);
  lmn::write_matrix_dump(rep, static_cast<std::size_t>(clusters), probe.sample_seed, out, stem);
  std::cout << "samples = " << rep.connectivity.size() << '\n'
            << "entropy_bits = " << lmn::format_double(rep.entropy_bits) << '\n'
            << "lmn = " << lmn::format_double(rep.lmn) << '\n'
            << "negative_eigenvalue_mass = " << lmn::format_double(rep.negative_eigenvalue_mass) << '\n'
            << "written " << (std::filesystem::path(out) / stem).string() << ".{csv,pgm,...}\n";
  return 0;
}

int do_dataset(lmn::TaskSpec spec, const std::string& out) {
  const lmn::TaskDataset ds = lmn::generate(spec);
  if (out.empty() || out == "-") {
    lmn::write_dataset_csv(ds, std::cout);
  } else {
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write '" + out + "'");
    lmn::write_dataset_csv(ds, os);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear mapping number experiments on algorithmic tasks"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train a model and record metrics");
  std::string config_path;
  bool quiet = false;
  run->add_option("--config", config_path, "key = value file mirroring the flags; flags take precedence");
  run->add_flag("--quiet", quiet, "suppress per-row progress");
  std::map<std::string, std::string> run_values;
  std::map<std::string, CLI::Option*> run_opts;
  for (const Setting& s : kRunSettings) run_opts[s.key] = run->add_option(std::string("--") + s.key, run_values[s.key], s.help);

  auto* analyze = app.add_subcommand("analyze", "phases, correlations and turning points of a metrics.csv");
  std::string metrics_path, plots_dir;
  double threshold = 1.0, tolerance = 2.0;
  int analyze_layer = 1;
  std::vector<double> targets{15.0, 20.0};
  analyze->add_option("metrics", metrics_path, "metrics.csv written by run")->required();
  analyze->add_option("--gen-threshold", threshold, "test accuracy that marks generalization");
  analyze->add_option("--layer", analyze_layer, "LMN layer used for correlation and turning points")->check(CLI::Range(0, 2));
  analyze->add_option("--plots", plots_dir, "regenerate SVG plots into this directory");
  analyze->add_option("--targets", targets, "turning-point values to look for")->delimiter(',');
  analyze->add_option("--tolerance", tolerance, "turning-point match tolerance");

  auto* dump = app.add_subcommand("dump-matrix", "connectivity matrix, spectrum and clustering of a checkpoint");
  std::string ckpt_path, dump_out = ".", dump_probe_set = "train";
  int clusters = 10;
  lmn::ProbeConfig probe;
  dump->add_option("checkpoint", ckpt_path, "checkpoint file")->required();
  dump->add_option("--out", dump_out, "output directory");
  dump->add_option("--layer", probe.layer_index, "probed layer")->check(CLI::Range(0, 2));
  dump->add_option("--clusters", clusters, "spectral clusters (default 10)");
  dump->add_option("--sample-cap", probe.sample_cap, "maximum probe samples");
  dump->add_option("--probe-seed", probe.sample_seed, "subsample and clustering seed");
  dump->add_option("--probe-set", dump_probe_set, "train | test | all");
  dump->add_option("--num-lambda", probe.num_lambda, "interpolation points per pair");
  dump->add_option("--threads", probe.threads, "worker threads, 0 = all cores");

  auto* dataset = app.add_subcommand("dataset", "export a task dataset as CSV");
  lmn::TaskSpec spec;
  std::string task_name = "add", dataset_out;
  dataset->add_option("--task", task_name, "add | s4 | xor");
  dataset->add_option("--modulus", spec.modulus, "modulus for add");
  dataset->add_option("--digits", spec.digits, "bit width for xor");
  dataset->add_option("--train-fraction", spec.train_fraction, "train share");
  dataset->add_option("--split-seed", spec.split_seed, "split seed");
  dataset->add_option("--out", dataset_out, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return do_run(config_path, run_opts, run_values, quiet);
    if (analyze->parsed()) return do_analyze(metrics_path, threshold, analyze_layer, plots_dir, targets, tolerance);
    if (dump->parsed()) return do_dump(ckpt_path, dump_out, probe, clusters, dump_probe_set);
    if (dataset->parsed()) {
      spec.kind = lmn::parse_task_kind(task_name);
      return do_dataset(spec, dataset_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
