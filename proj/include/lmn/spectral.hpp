// SPDX-License-Identifier: Apache-2.0
//
// Spectral clustering of an affinity matrix, used to reorder connectivity
// matrices so that samples sharing a linear mapping sit in contiguous blocks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmn/linalg.hpp"
#include "lmn/random.hpp"

namespace lmn {

struct KMeansOptions {
  int restarts = 5;
  int max_iterations = 100;
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<int> labels;
  double inertia = 0.0;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double t = a[d] - b[d];
    s += t * t;
  }
  return s;
}

/// One k-means++ seeded Lloyd run. Assignment ties go to the lowest centroid.
inline KMeansResult lloyd(const std::vector<double>& pts, std::size_t n, std::size_t dim, std::size_t k, Rng& rng,
                          int max_iterations) {
  std::vector<double> centers(k * dim);
  std::vector<double> best_d(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(first * dim), dim, centers.begin());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best_d[i] = std::min(best_d[i], sq_dist(&pts[i * dim], &centers[(c - 1) * dim], dim));
      total += best_d[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < best_d[i]) {
          pick = i;
          break;
        }
        u -= best_d[i];
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(pick * dim), dim, centers.begin() + static_cast<std::ptrdiff_t>(c * dim));
  }

  std::vector<int> labels(n, -1);
  std::vector<double> dist(n, 0.0);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(&pts[i * dim], &centers[c * dim], dim);
        if (dd < bd) {
          bd = dd;
          best = static_cast<int>(c);
        }
      }
      dist[i] = bd;
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;

    std::vector<std::size_t> count(k, 0);
    std::fill(centers.begin(), centers.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[i]);
      ++count[c];
      for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] += pts[i * dim + d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] /= static_cast<double>(count[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy_n(pts.begin() + static_cast<std::ptrdiff_t>(far * dim), dim, centers.begin() + static_cast<std::ptrdiff_t>(c * dim));
      dist[far] = 0.0;
    }
  }
  KMeansResult r;
  r.labels = std::move(labels);
  for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist(&pts[i * dim], &centers[static_cast<std::size_t>(r.labels[i]) * dim], dim);
  return r;
}

/// Renumbers labels in order of first appearance.
inline std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::vector<int> map;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto l = static_cast<std::size_t>(labels[i]);
    if (l >= map.size()) map.resize(l + 1, -1);
    if (map[l] < 0) map[l] = static_cast<int>(std::count_if(map.begin(), map.end(), [](int v) { return v >= 0; }));
    out[i] = map[l];
  }
  return out;
}

}  // namespace detail

/// Best of `restarts` k-means++ runs (lowest inertia, earliest on ties) over
/// row-major points.
inline KMeansResult kmeans(const std::vector<double>& pts, std::size_t n, std::size_t dim, std::size_t k,
                           const KMeansOptions& opt = {}) {
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: k must lie in [1, n]");
  Rng rng(opt.seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, opt.restarts); ++r) {
    KMeansResult cur = detail::lloyd(pts, n, dim, k, rng, opt.max_iterations);
    if (cur.inertia < best.inertia) best = std::move(cur);
  }
  best.labels = detail::canonical_labels(best.labels);
  return best;
}

struct SpectralClustering {
  std::vector<int> labels;               // per original sample, numbered by first appearance
  std::vector<std::size_t> permutation;  // samples sorted by label, original order within a label
};

/// Clusters the rows of an affinity matrix: eigenvectors of the k smallest
/// eigenvalues of I - D^-1/2 A D^-1/2, row-normalized, then k-means.
inline SpectralClustering spectral_reorder(const SymmetricMatrix& affinity, std::size_t k, std::uint64_t seed = 0) {
  const std::size_t n = affinity.size();
  if (k < 2 || k > n)
    throw std::invalid_argument("spectral_reorder: k = " + std::to_string(k) + " outside [2, " + std::to_string(n) + "]");

  SpectralClustering out;
  if (k == n) {
    out.labels.resize(n);
    std::iota(out.labels.begin(), out.labels.end(), 0);
  } else {
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      for (double v : affinity.row(i)) d += v;
      inv_sqrt_deg[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    SymmetricMatrix lap(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        lap.set(i, j, (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * affinity(i, j) * inv_sqrt_deg[j]);

    const EigenDecomposition eig = jacobi_eigen(lap, true);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eig.values[a] < eig.values[b]; });

    std::vector<double> emb(n * k);
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double v = eig.vectors[order[c] * n + i];
        emb[i * k + c] = v;
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (std::size_t c = 0; c < k; ++c) emb[i * k + c] /= norm;
    }
    out.labels = kmeans(emb, n, k, k, {.restarts = 5, .max_iterations = 100, .seed = seed}).labels;
  }

  out.permutation.resize(n);
  std::iota(out.permutation.begin(), out.permutation.end(), std::size_t{0});
  std::stable_sort(out.permutation.begin(), out.permutation.end(),
                   [&](std::size_t a, std::size_t b) { return out.labels[a] < out.labels[b]; });
  return out;
}

}  // namespace lmn
