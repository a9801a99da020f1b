// SPDX-License-Identifier: Apache-2.0
//
// Linear connectivity matrix and linear mapping number (LMN).
//
// For two probe samples i, j with activations h_i, h_j at some layer, the
// sub-network above that layer is evaluated along the straight segment
// between them at num_lambda evenly spaced points. L_ij is the mean, over
// output logits, of the squared correlation between the logit and the
// segment parameter. The LMN is 2^S where S is the entropy in bits of the
// normalized |eigenvalue| distribution of L.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lmn/linalg.hpp"
#include "lmn/mlp.hpp"
#include "lmn/random.hpp"
#include "lmn/tasks.hpp"

namespace lmn {

enum class ProbeSet { Train, Test, All };

struct ProbeConfig {
  int num_lambda = 21;
  std::size_t sample_cap = 512;
  std::uint64_t sample_seed = 0;
  int layer_index = 1;
  ProbeSet probe_set = ProbeSet::Train;
  unsigned threads = 0;  // 0 = std::thread::hardware_concurrency()
};

inline void validate(const ProbeConfig& cfg) {
  if (cfg.num_lambda < 3) throw std::invalid_argument("ProbeConfig: num_lambda must be >= 3");
  if (cfg.sample_cap < 2) throw std::invalid_argument("ProbeConfig: sample_cap must be >= 2");
  if (cfg.layer_index < 0 || cfg.layer_index > 2) throw std::invalid_argument("ProbeConfig: layer_index must be 0, 1 or 2");
}

/// lambda_t = t / (num_lambda - 1), t = 0 .. num_lambda - 1.
inline std::vector<double> lambda_grid(int num_lambda) {
  if (num_lambda < 3) throw std::invalid_argument("lambda_grid: num_lambda must be >= 3");
  std::vector<double> g(static_cast<std::size_t>(num_lambda));
  for (int t = 0; t < num_lambda; ++t) g[static_cast<std::size_t>(t)] = static_cast<double>(t) / (num_lambda - 1);
  return g;
}

namespace detail {

// (1 - l) a + l b, exact at both endpoints and constant where a == b.
inline double lerp_exact(double a, double b, double l) { return a == b ? a : (1.0 - l) * a + l * b; }

}  // namespace detail

/// Points (1 - lambda) x_i + lambda x_j on the lambda grid. The endpoints are
/// x_i and x_j exactly and components shared by both stay fixed.
inline std::vector<std::vector<double>> interpolate(std::span<const double> xi, std::span<const double> xj, int num_lambda) {
  if (xi.size() != xj.size()) throw std::invalid_argument("interpolate: length mismatch");
  const auto grid = lambda_grid(num_lambda);
  std::vector<std::vector<double>> pts(grid.size(), std::vector<double>(xi.size()));
  for (std::size_t t = 0; t < grid.size(); ++t) {
    const double l = grid[t];
    for (std::size_t k = 0; k < xi.size(); ++k) pts[t][k] = detail::lerp_exact(xi[k], xj[k], l);
  }
  return pts;
}

namespace detail {

/// (1/d) sum_k r^2(y_k(lambda), lambda) for row-major logits (num points x d).
inline double mean_r2_over_outputs(std::span<const double> logits, std::size_t d, std::span<const double> grid) {
  const std::size_t n = grid.size();
  std::vector<double> col(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t t = 0; t < n; ++t) col[t] = logits[t * d + k];
    sum += pearson_r2(col, grid);
  }
  return sum / static_cast<double>(d);
}

inline std::vector<double> stack(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

}  // namespace detail

/// Linear connectivity of one pair: interpolates the layer activations and
/// pushes every point through forward_from_layer.
inline double linear_connectivity(const MlpModel& m, int layer, std::span<const double> hi, std::span<const double> hj,
                                  const ProbeConfig& cfg) {
  const auto width = static_cast<std::size_t>(m.layer_width(layer));
  if (hi.size() != width || hj.size() != width)
    throw std::invalid_argument("linear_connectivity: activation width does not match layer " + std::to_string(layer));
  const auto grid = lambda_grid(cfg.num_lambda);
  const auto pts = detail::stack(interpolate(hi, hj, cfg.num_lambda));
  const auto logits = forward_rows_from_layer(m, layer, pts, grid.size());
  return detail::mean_r2_over_outputs(logits, static_cast<std::size_t>(m.shape.out), grid);
}

/// Layer activations of each input pair, stacked row-major.
inline std::vector<double> layer_activations(const MlpModel& m, int layer, std::span<const TokenPair> inputs) {
  std::vector<double> out;
  out.reserve(inputs.size() * static_cast<std::size_t>(m.layer_width(layer)));
  for (const TokenPair& p : inputs) {
    const auto act = forward(m, p.a, p.b);
    const auto& h = act.layer(layer);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

/// Connectivity matrix over `rows` stacked activations at `layer`.
///
/// The first map above the layer is affine, so each pair is interpolated in
/// the pre-activation space of the next layer (computed once per sample)
/// rather than re-applying that affine map at every point. Pairs are
/// distributed over threads by row; each cell is written once by one thread
/// and its value does not depend on the thread count.
inline SymmetricMatrix connectivity_from_activations(const MlpModel& m, int layer, std::span<const double> acts,
                                                     std::size_t rows, int num_lambda, unsigned threads = 1) {
  if (rows < 2) throw std::invalid_argument("connectivity: need at least 2 samples, got " + std::to_string(rows));
  const auto grid = lambda_grid(num_lambda);
  const std::vector<double> z = next_preactivation_rows(m, layer, acts, rows);
  const std::size_t zw = z.size() / rows;
  const auto d = static_cast<std::size_t>(m.shape.out);
  const std::size_t np = grid.size();

  std::vector<double> cells(rows * rows, 0.0);
  auto work = [&](std::size_t first_row, std::size_t stride) {
    std::vector<double> seg(np * zw);
    for (std::size_t i = first_row; i < rows; i += stride) {
      const double* zi = z.data() + i * zw;
      for (std::size_t j = i + 1; j < rows; ++j) {
        const double* zj = z.data() + j * zw;
        for (std::size_t t = 0; t < np; ++t) {
          const double l = grid[t];
          double* out = seg.data() + t * zw;
          for (std::size_t k = 0; k < zw; ++k) out[k] = detail::lerp_exact(zi[k], zj[k], l);
        }
        const auto logits = logits_from_preactivation_rows(m, layer, seg, np);
        const double v = detail::mean_r2_over_outputs(logits, d, grid);
        cells[i * rows + j] = v;
        cells[j * rows + i] = v;
      }
    }
  };

  unsigned nt = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
  nt = static_cast<unsigned>(std::min<std::size_t>(nt, rows));
  if (nt <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (unsigned t = 0; t < nt; ++t) pool.emplace_back([&work, t, nt] { work(t, nt); });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < rows; ++i) cells[i * rows + i] = 1.0;
  return SymmetricMatrix::from_row_major(rows, cells);
}

/// Positions 0..n-1, or a seeded uniform subsample of `cap` of them (sorted)
/// when n exceeds the cap.
inline std::vector<std::size_t> subsample_positions(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  if (n <= cap) return pos;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  pos.resize(cap);
  std::sort(pos.begin(), pos.end());
  return pos;
}

struct ProbedConnectivity {
  SymmetricMatrix matrix;
  std::vector<std::size_t> positions;  // which of the given inputs were probed
};

inline ProbedConnectivity connectivity_matrix(const MlpModel& m, std::span<const TokenPair> inputs, const ProbeConfig& cfg) {
  validate(cfg);
  auto positions = subsample_positions(inputs.size(), cfg.sample_cap, cfg.sample_seed);
  if (positions.size() < 2) throw std::invalid_argument("connectivity_matrix: need at least 2 samples");
  std::vector<TokenPair> chosen;
  chosen.reserve(positions.size());
  for (std::size_t p : positions) chosen.push_back(inputs[p]);
  const auto acts = layer_activations(m, cfg.layer_index, chosen);
  return {connectivity_from_activations(m, cfg.layer_index, acts, chosen.size(), cfg.num_lambda, cfg.threads),
          std::move(positions)};
}

inline constexpr double kEigenvalueFloor = 1e-15;

struct LmnReport {
  SymmetricMatrix connectivity{1};
  EigenSpectrum spectrum;
  double entropy_bits = 0.0;
  double lmn = 1.0;
  double negative_eigenvalue_mass = 0.0;
  int layer_index = -1;
  std::vector<std::size_t> sample_indices;  // dataset indices of the probed samples

  bool operator==(const LmnReport&) const = default;
};

/// Eigendecomposes L, normalizes |lambda| and reports S = H(|lambda| / sum) and 2^S.
inline LmnReport lmn(const SymmetricMatrix& connectivity, EigenMethod method = EigenMethod::TridiagonalQL) {
  LmnReport r;
  r.connectivity = connectivity;
  r.spectrum = eigen_symmetric(connectivity, method);
  r.entropy_bits = lmn::entropy_bits(r.spectrum.normalized, kEigenvalueFloor);
  r.lmn = std::exp2(r.entropy_bits);
  double neg = 0.0, total = 0.0;
  for (double e : r.spectrum.eigenvalues) {
    total += std::abs(e);
    if (e < 0.0) neg += -e;
  }
  r.negative_eigenvalue_mass = total > 0.0 ? neg / total : 0.0;
  return r;
}

inline const std::vector<std::size_t>& probe_indices(const TaskDataset& ds, ProbeSet set, std::vector<std::size_t>& storage) {
  switch (set) {
    case ProbeSet::Train: return ds.train_indices;
    case ProbeSet::Test: return ds.test_indices;
    case ProbeSet::All: break;
  }
  storage.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) storage[i] = i;
  return storage;
}

/// LMN between `layer` and the logits over the configured probe set.
inline LmnReport lmn_at_layer(const MlpModel& m, const TaskDataset& ds, int layer, ProbeConfig cfg) {
  cfg.layer_index = layer;
  validate(cfg);
  std::vector<std::size_t> storage;
  const auto& pool = probe_indices(ds, cfg.probe_set, storage);
  std::vector<TokenPair> inputs;
  inputs.reserve(pool.size());
  for (std::size_t i : pool) inputs.push_back(ds.inputs[i]);
  auto probed = connectivity_matrix(m, inputs, cfg);
  LmnReport r = lmn(probed.matrix);
  r.layer_index = layer;
  r.sample_indices.reserve(probed.positions.size());
  for (std::size_t p : probed.positions) r.sample_indices.push_back(pool[p]);
  return r;
}

}  // namespace lmn
