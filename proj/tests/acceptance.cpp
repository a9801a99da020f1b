// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS / FAIL line per criterion. Soft criteria print
// SOFT-PASS / SOFT-FAIL and never affect the exit status.
//
//   acceptance [--runs DIR] [--only 1,2,...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lmn/experiment.hpp"
#include "lmn/linalg.hpp"
#include "lmn/lmn_metric.hpp"
#include "lmn/random.hpp"
#include "lmn/spectral.hpp"
#include "test_support.hpp"

namespace {

using namespace lmn;
namespace fs = std::filesystem;

enum class Kind { Hard, Soft };

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_hard_failures = 0;

void report(const std::string& id, const std::string& name, Kind kind, const Verdict& v) {
  const char* tag = kind == Kind::Hard ? (v.pass ? "PASS" : "FAIL") : (v.pass ? "SOFT-PASS" : "SOFT-FAIL");
  if (kind == Kind::Hard && !v.pass) ++g_hard_failures;
  std::cout << "[" << tag << "] " << id << ". " << name << ": " << v.detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string opt_step(std::optional<long> s) { return s ? std::to_string(*s) : std::string("none"); }

SymmetricMatrix blocks_of_ones(std::size_t n, std::size_t c) {
  SymmetricMatrix m(n);
  const std::size_t size = n / c;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m.set(i, j, i / size == j / size ? 1.0 : 0.0);
  return m;
}

// 1 -------------------------------------------------------------------------
Verdict analytic_anchors() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t count = 0;
  auto check = [&](const SymmetricMatrix& m, double expected) {
    worst = std::max(worst, std::abs(lmn::lmn(m).lmn - expected));
    ++count;
  };
  for (std::size_t n = 1; n <= 100; ++n) {
    check(SymmetricMatrix::from_row_major(n, std::vector<double>(n * n, 1.0)), 1.0);
    check(SymmetricMatrix::identity(n), static_cast<double>(n));
  }
  for (std::size_t c : {2u, 3u, 5u, 10u})
    for (std::size_t n = c; n <= 100; n += c) check(blocks_of_ones(n, c), static_cast<double>(c));
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t < 1.0,
          std::to_string(count) + " matrices, max |error| " + fmt(worst) + " (tol 1e-9), " + fmt(t) + " s (limit 1 s)"};
}

// 2 -------------------------------------------------------------------------
Verdict affine_zero_complexity() {
  const TaskSpec spec;
  const TaskDataset ds = generate(spec);
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    TrainConfig tc;
    tc.init_seed = static_cast<std::uint64_t>(trial);
    tc.init_scale = rng.uniform(0.5, 3.0);
    const MlpModel m = init_model(spec, tc);
    ProbeConfig pc;
    pc.sample_cap = 2 + rng.below(127);
    pc.sample_seed = rng.next_u64();
    pc.probe_set = static_cast<ProbeSet>(rng.below(3));
    // Above the last hidden layer only the affine logit map remains.
    worst = std::max(worst, std::abs(lmn_at_layer(m, ds, 2, pc).lmn - 1.0));
  }
  return {worst <= 1e-6, "100 probe sets through an affine sub-network, max |LMN - 1| " + fmt(worst) + " (tol 1e-6)"};
}

// 3 -------------------------------------------------------------------------
Verdict gradient_check() {
  double worst = 0.0;
  std::string worst_tensor;
  std::size_t params = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const MlpModel m = testing::small_random_model(7, 6, 11, seed);
    const auto batch = testing::random_batch(7, 32, seed + 100);
    for (const auto& c : testing::finite_difference_check(m, batch)) {
      params += c.checked;
      if (c.max_rel_error >= worst) {
        worst = c.max_rel_error;
        worst_tensor = c.tensor;
      }
    }
  }
  return {worst <= 1e-4, std::to_string(params) + " parameters over 7 tensors x 3 models, max relative error " +
                             fmt(worst) + " in " + worst_tensor + " (tol 1e-4)"};
}

// 4 -------------------------------------------------------------------------
Verdict eigensolver_oracle() {
  double trace_err = 0.0, recon_err = 0.0;
  for (std::size_t n = 1; n <= 50; ++n) {
    Rng rng(400 + n);
    SymmetricMatrix m(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) m.set(i, j, rng.uniform(-1.0, 1.0));
    const auto e = jacobi_eigen(m, true);
    const auto ql = tridiagonal_ql_eigenvalues(m);
    trace_err = std::max(trace_err, std::abs(std::accumulate(e.values.begin(), e.values.end(), 0.0) - m.trace()));
    trace_err = std::max(trace_err, std::abs(std::accumulate(ql.begin(), ql.end(), 0.0) - m.trace()));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += e.vectors[k * n + i] * e.values[k] * e.vectors[k * n + j];
        recon_err = std::max(recon_err, std::abs(s - m(i, j)));
      }
  }
  return {trace_err <= 1e-9 && recon_err <= 1e-8, "n = 1..50, max trace error " + fmt(trace_err) +
                                                      " (tol 1e-9), max reconstruction error " + fmt(recon_err) +
                                                      " (tol 1e-8)"};
}

// 10 ------------------------------------------------------------------------
Verdict spectral_recovery() {
  int exact = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    std::vector<int> truth;
    for (int b = 0; b < 3; ++b) truth.insert(truth.end(), 3 + rng.below(10), b);
    rng.shuffle(std::span<int>(truth));
    const std::size_t n = truth.size();
    SymmetricMatrix a(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        a.set(i, j, i == j ? 1.0 : truth[i] == truth[j] ? rng.uniform(0.8, 1.0) : rng.uniform(0.0, 0.2));
    const auto sc = spectral_reorder(a, 3, seed);
    bool same = true;
    for (std::size_t i = 0; i < n && same; ++i)
      for (std::size_t j = 0; j < n && same; ++j) same = (sc.labels[i] == sc.labels[j]) == (truth[i] == truth[j]);
    exact += same ? 1 : 0;
  }
  return {exact == 20, std::to_string(exact) + "/20 planted 3-block partitions recovered exactly"};
}

// Training runs --------------------------------------------------------------

struct Run {
  std::string name;
  RunConfig cfg;
  RunResult result;
  double seconds = 0.0;
};

Run train(const std::string& name, const RunConfig& cfg) {
  std::cout << "  running " << name << " (" << cfg.train.steps << " steps) ..." << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  Run r{name, cfg, run(cfg), 0.0};
  r.seconds = seconds_since(t0);
  std::cout << "  finished " << name << " in " << fmt(r.seconds, 5) << " s; memorization " << opt_step(r.result.phases.memorization_step)
            << ", generalization " << opt_step(r.result.phases.generalization_step) << std::endl;
  return r;
}

RunConfig default_run(const fs::path& dir, TaskKind kind, std::uint64_t seed) {
  RunConfig cfg;
  cfg.task.kind = kind;
  cfg.train.init_seed = seed;
  cfg.output_dir = dir.string();
  return cfg;
}

std::vector<std::size_t> rows_in(const Run& r, Phase p) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < r.result.log.rows.size(); ++i)
    if (r.result.phases.labels[i] == p) idx.push_back(i);
  return idx;
}

Verdict grokking(const std::vector<Run>& runs) {
  int passed = 0;
  std::string detail;
  for (const Run& r : runs) {
    const auto& p = r.result.phases;
    const bool ok = p.memorization_step && p.generalization_step && *p.generalization_step > *p.memorization_step &&
                    *p.generalization_step >= 3 * *p.memorization_step;
    passed += ok ? 1 : 0;
    detail += r.name + " mem " + opt_step(p.memorization_step) + " gen(test>=0.99) " + opt_step(p.generalization_step) +
              (ok ? " ok" : " no") + " [" + fmt(r.seconds / 60.0, 3) + " min]; ";
  }
  return {passed >= 2, std::to_string(passed) + "/3 seeds (need 2): " + detail};
}

Verdict compression(const std::vector<Run>& runs) {
  int passed = 0;
  std::string detail;
  for (const Run& r : runs) {
    const auto gen_rows = rows_in(r, Phase::Generalizing);
    const Correlation c = correlate(r.result.log, r.result.phases, Phase::Generalizing, 1);
    bool ok = false;
    std::string d = r.name + " rows " + std::to_string(gen_rows.size());
    if (!gen_rows.empty()) {
      const double first = r.result.log.rows[gen_rows.front()].lmn_layer1;
      const double last = r.result.log.rows[gen_rows.back()].lmn_layer1;
      ok = last < first && c.status == Correlation::Status::Ok && c.r2_lmn_vs_test_loss >= 0.7;
      d += " lmn1 " + fmt(first) + " -> " + fmt(last) + " r2 " + fmt(c.r2_lmn_vs_test_loss) + " (" +
           std::string(to_string(c.status)) + ")";
    }
    passed += ok ? 1 : 0;
    detail += d + (ok ? " ok; " : " no; ");
  }
  return {passed >= 2, std::to_string(passed) + "/3 seeds (need 2): " + detail};
}

Verdict lmn_beats_l2(const std::vector<Run>& runs) {
  int better = 0;
  std::string detail;
  for (const Run& r : runs) {
    const Correlation c = correlate(r.result.log, r.result.phases, Phase::Generalizing, 1);
    const bool ok = c.status == Correlation::Status::Ok && c.r2_lmn_vs_test_loss > c.r2_l2_vs_test_loss;
    better += ok ? 1 : 0;
    detail += r.name + " r2 lmn " + fmt(c.r2_lmn_vs_test_loss) + " vs l2 " + fmt(c.r2_l2_vs_test_loss) + "; ";
  }
  return {better >= 2, std::to_string(better) + "/3 seeds: " + detail};
}

double relative_range(const Run& r, int layer) {
  const auto& p = r.result.phases;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  std::size_t n = 0;
  for (const MetricRow& row : r.result.log.rows) {
    if (!p.memorization_step || row.step < *p.memorization_step) continue;
    const double v = row.lmn_at(layer);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return (hi - lo) / (sum / static_cast<double>(n));
}

Verdict layer_contrast(const std::vector<Run>& runs) {
  int ok = 0;
  std::string detail;
  for (const Run& r : runs) {
    const double r1 = relative_range(r, 1), r2 = relative_range(r, 2);
    ok += r2 < r1 ? 1 : 0;
    detail += r.name + " layer1 " + fmt(r1) + " layer2 " + fmt(r2) + "; ";
  }
  return {ok == static_cast<int>(runs.size()),
          std::to_string(ok) + "/" + std::to_string(runs.size()) + " runs with smaller layer-2 relative range: " + detail};
}

Verdict xor_turning_points(const Run& r) {
  const auto tps = detect_xor_turning_points(r.result.log, r.result.phases);
  const auto hits = match_turning_points(tps, {15.0, 20.0}, 2.0);
  std::string list;
  for (const auto& tp : tps) list += (list.empty() ? "" : ", ") + fmt(tp.lmn) + "@" + std::to_string(tp.step);
  return {hits[0] && hits[1], "gen " + opt_step(r.result.phases.generalization_step) + ", " + std::to_string(tps.size()) +
                                  " extrema [" + list + "]; near 15: " + (hits[0] ? "yes" : "no") +
                                  ", near 20: " + (hits[1] ? "yes" : "no")};
}

Verdict negative_mass(const std::vector<Run>& runs) {
  double worst = 0.0;
  std::string detail;
  for (const Run& r : runs) {
    const auto& m = r.result.max_negative_eigenvalue_mass;
    worst = std::max({worst, m[0], m[1], m[2]});
    detail += r.name + " " + fmt(m[0], 3) + "/" + fmt(m[1], 3) + "/" + fmt(m[2], 3) + "; ";
  }
  return {worst < 0.05, "max negative eigenvalue mass per layer (limit 0.05): " + detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

Verdict determinism(const fs::path& root) {
  std::vector<std::string> csv;
  for (const char* name : {"det_a", "det_b"}) {
    fs::remove_all(root / name);
    RunConfig cfg = default_run(root / name, TaskKind::ModularAddition, 0);
    cfg.train.steps = 500;
    cfg.probe.sample_cap = 128;
    train(name, cfg);
    csv.push_back(slurp(root / name / "metrics.csv"));
  }
  const bool same = !csv[0].empty() && csv[0] == csv[1];
  return {same, "two 500-step runs, metrics.csv " + std::to_string(csv[0].size()) + " bytes, " +
                    (same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string runs_dir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--runs", runs_dir, "directory for training-run artifacts");
  app.add_option("--only", only, "run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](std::initializer_list<int> ids) {
    if (selected.empty()) return true;
    return std::any_of(ids.begin(), ids.end(), [&](int i) { return selected.count(i) > 0; });
  };

  try {
    if (want({1})) report("1", "analytic LMN anchors", Kind::Hard, analytic_anchors());
    if (want({2})) report("2", "affine sub-network has LMN 1", Kind::Hard, affine_zero_complexity());
    if (want({3})) report("3", "gradients match finite differences", Kind::Hard, gradient_check());
    if (want({4})) report("4", "eigensolver oracle", Kind::Hard, eigensolver_oracle());
    if (want({10})) report("10", "spectral clustering recovery", Kind::Hard, spectral_recovery());

    const fs::path root(runs_dir);
    if (want({9})) report("9", "determinism", Kind::Hard, determinism(root));

    if (want({5, 6, 7})) {
      std::vector<Run> add;
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const std::string name = "add_seed" + std::to_string(seed);
        RunConfig cfg = default_run(root / name, TaskKind::ModularAddition, seed);
        cfg.generalization_threshold = 0.99;
        cfg.dump_matrix_at = {200, 7600};
        add.push_back(train(name, cfg));
      }
      if (want({5})) report("5", "grokking on modular addition", Kind::Hard, grokking(add));
      if (want({6})) {
        report("6", "compression trend in the generalizing phase", Kind::Hard, compression(add));
        report("6+", "LMN tracks test loss better than L2 norm", Kind::Soft, lmn_beats_l2(add));
      }
      if (want({7})) report("7", "layer-2 LMN varies less than layer-1 LMN", Kind::Soft, layer_contrast(add));
      report("extra", "connectivity nearly positive semi-definite", Kind::Soft, negative_mass(add));
    }
    if (want({8})) {
      const Run x = train("xor_seed0", default_run(root / "xor_seed0", TaskKind::BitwiseXor, 0));
      report("8", "XOR turning points near 15 and 20", Kind::Soft, xor_turning_points(x));
    }
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance suite aborted: " << e.what() << std::endl;
    return 1;
  }

  std::cout << (g_hard_failures == 0 ? "all hard criteria passed" : std::to_string(g_hard_failures) + " hard criteria failed")
            << std::endl;
  return g_hard_failures == 0 ? 0 : 1;
}
