// SPDX-License-Identifier: Apache-2.0
//
// Dense symmetric linear algebra used by the LMN metric: a symmetric matrix
// carrier, a cyclic Jacobi eigensolver, squared Pearson correlation and
// Shannon entropy in bits.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmn {

/// Raised when the Jacobi sweep budget is exhausted before the off-diagonal
/// mass reaches working precision.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense n x n real matrix that is symmetric by construction: every write
/// goes to both (i, j) and (j, i).
class SymmetricMatrix {
 public:
  explicit SymmetricMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {
    if (n == 0) throw std::invalid_argument("SymmetricMatrix: dimension must be >= 1");
  }

  /// Builds from row-major storage; throws unless the input is exactly symmetric.
  static SymmetricMatrix from_row_major(std::size_t n, std::span<const double> values) {
    if (values.size() != n * n) {
      throw std::invalid_argument("SymmetricMatrix: expected " + std::to_string(n * n) +
                                  " entries, got " + std::to_string(values.size()));
    }
    SymmetricMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (values[i * n + j] != values[j * n + i]) {
          throw std::invalid_argument("SymmetricMatrix: input is not symmetric at (" +
                                      std::to_string(i) + ", " + std::to_string(j) + ")");
        }
      }
    }
    std::copy(values.begin(), values.end(), m.data_.begin());
    return m;
  }

  static SymmetricMatrix identity(std::size_t n) {
    SymmetricMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) m.data_[i * n + i] = 1.0;
    return m;
  }

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }

  void set(std::size_t i, std::size_t j, double v) {
    data_[i * n_ + j] = v;
    data_[j * n_ + i] = v;
  }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * n_, n_}; }
  const std::vector<double>& row_major() const noexcept { return data_; }

  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < n_; ++i) t += data_[i * n_ + i];
    return t;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  /// Simultaneous row/column permutation: result(i, j) = this(perm[i], perm[j]).
  SymmetricMatrix permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != n_) throw std::invalid_argument("SymmetricMatrix::permuted: size mismatch");
    SymmetricMatrix out(n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) out.data_[i * n_ + j] = data_[perm[i] * n_ + perm[j]];
    return out;
  }

  bool operator==(const SymmetricMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<double> data_;
};

/// Eigenvalues sorted by descending magnitude together with the
/// magnitude-normalized distribution used for entropy.
struct EigenSpectrum {
  std::vector<double> eigenvalues;
  std::vector<double> normalized;

  bool operator==(const EigenSpectrum&) const = default;
};

/// Eigenvalues (unsorted, in diagonal order) and eigenvectors. vectors is
/// row-major n x n with row k holding the unit eigenvector for values[k].
struct EigenDecomposition {
  std::vector<double> values;
  std::vector<double> vectors;
  int sweeps = 0;
};

inline constexpr int kDefaultJacobiSweeps = 100;

/// Cyclic Jacobi rotations. Converged once the off-diagonal Frobenius mass is
/// below machine epsilon times the full Frobenius norm.
inline EigenDecomposition jacobi_eigen(const SymmetricMatrix& m, bool want_vectors = true,
                                       int max_sweeps = kDefaultJacobiSweeps) {
  const std::size_t n = m.size();
  std::vector<double> a = m.row_major();
  std::vector<double> v;
  if (want_vectors) {
    v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  }

  double total = 0.0;
  for (double x : a) total += x * x;
  const double eps = std::numeric_limits<double>::epsilon();
  const double target = eps * eps * total;

  auto off_diagonal = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a[i * n + j] * a[i * n + j];
    return 2.0 * s;
  };

  int sweep = 0;
  for (; off_diagonal() > target; ++sweep) {
    if (sweep == max_sweeps) {
      throw ConvergenceError("jacobi_eigen: no convergence after " + std::to_string(max_sweeps) +
                             " sweeps (n = " + std::to_string(n) + ")");
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Skip rotations that cannot change either diagonal entry in floating point.
        if (sweep > 3) {
          const double g = 100.0 * std::abs(apq);
          if (std::abs(app) + g == std::abs(app) && std::abs(aqq) + g == std::abs(aqq)) {
            a[p * n + q] = a[q * n + p] = 0.0;
            continue;
          }
        }
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::hypot(1.0, tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        double* rp = a.data() + p * n;
        double* rq = a.data() + q * n;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = rp[k];
          const double akq = rq[k];
          rp[k] = c * akp - s * akq;
          rq[k] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          a[k * n + p] = rp[k];
          a[k * n + q] = rq[k];
        }
        rp[p] = app - t * apq;
        rq[q] = aqq + t * apq;
        rp[q] = rq[p] = 0.0;

        if (want_vectors) {
          double* vp = v.data() + p * n;
          double* vq = v.data() + q * n;
          for (std::size_t k = 0; k < n; ++k) {
            const double x = vp[k];
            const double y = vq[k];
            vp[k] = c * x - s * y;
            vq[k] = s * x + c * y;
          }
        }
      }
    }
  }

  EigenDecomposition out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a[i * n + i];
  out.vectors = std::move(v);
  out.sweeps = sweep;
  return out;
}

/// Sorts eigenvalues by descending |lambda| (ties: larger signed value first)
/// and attaches the normalized magnitudes.
inline EigenSpectrum make_spectrum(std::vector<double> eigenvalues) {
  std::stable_sort(eigenvalues.begin(), eigenvalues.end(), [](double x, double y) {
    const double ax = std::abs(x), ay = std::abs(y);
    return ax != ay ? ax > ay : x > y;
  });
  EigenSpectrum s;
  s.normalized.resize(eigenvalues.size());
  double mass = 0.0;
  for (double e : eigenvalues) mass += std::abs(e);
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    // A zero matrix has no mass; treat it as a point mass on the first entry.
    s.normalized[i] = mass > 0.0 ? std::abs(eigenvalues[i]) / mass : (i == 0 ? 1.0 : 0.0);
  }
  s.eigenvalues = std::move(eigenvalues);
  return s;
}

/// Eigenvalues only: Householder reduction to tridiagonal form followed by
/// implicit QL with Wilkinson shifts. Roughly 4n^3/3 flops against ~10 full
/// Jacobi sweeps, which matters for the 512 x 512 connectivity matrices.
inline std::vector<double> tridiagonal_ql_eigenvalues(const SymmetricMatrix& m, int max_iterations = 60) {
  const std::size_t n = m.size();
  std::vector<double> a = m.row_major();
  std::vector<double> d(n, 0.0), e(n, 0.0);
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };

  // Householder tridiagonalization on the lower triangle.
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t l = i - 1;
    double h = 0.0;
    if (l > 0) {
      double scale = 0.0;
      for (std::size_t k = 0; k <= l; ++k) scale += std::abs(A(i, k));
      if (scale == 0.0) {
        e[i] = A(i, l);
      } else {
        for (std::size_t k = 0; k <= l; ++k) {
          A(i, k) /= scale;
          h += A(i, k) * A(i, k);
        }
        double f = A(i, l);
        double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        A(i, l) = f - g;
        f = 0.0;
        for (std::size_t j = 0; j <= l; ++j) {
          g = 0.0;
          for (std::size_t k = 0; k <= j; ++k) g += A(j, k) * A(i, k);
          for (std::size_t k = j + 1; k <= l; ++k) g += A(k, j) * A(i, k);
          e[j] = g / h;
          f += e[j] * A(i, j);
        }
        const double hh = f / (h + h);
        for (std::size_t j = 0; j <= l; ++j) {
          f = A(i, j);
          e[j] = g = e[j] - hh * f;
          for (std::size_t k = 0; k <= j; ++k) A(j, k) -= f * e[k] + g * A(i, k);
        }
      }
    } else {
      e[i] = A(i, l);
    }
    d[i] = h;
  }
  for (std::size_t i = 0; i < n; ++i) d[i] = A(i, i);

  // Implicit QL on (d, e).
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  if (n > 0) e[n - 1] = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  // Off-diagonals below eps * ||T|| are dropped even next to zero eigenvalues.
  double tnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) tnorm = std::max(tnorm, std::abs(d[i]) + std::abs(e[i]));
  for (std::size_t l = 0; l < n; ++l) {
    int iter = 0;
    for (;;) {
      std::size_t mm = l;
      for (; mm + 1 < n; ++mm) {
        const double dd = std::abs(d[mm]) + std::abs(d[mm + 1]);
        if (std::abs(e[mm]) <= eps * dd || std::abs(e[mm]) <= eps * tnorm) break;
      }
      if (mm == l) break;
      if (iter++ == max_iterations) {
        throw ConvergenceError("tridiagonal_ql_eigenvalues: no convergence after " + std::to_string(max_iterations) +
                               " iterations (n = " + std::to_string(n) + ")");
      }
      double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
      double r = std::hypot(g, 1.0);
      g = d[mm] - d[l] + e[l] / (g + (g >= 0.0 ? std::abs(r) : -std::abs(r)));
      double s = 1.0, c = 1.0, p = 0.0;
      bool deflated = false;
      for (std::size_t i = mm; i-- > l;) {
        double f = s * e[i];
        const double b = c * e[i];
        r = std::hypot(f, g);
        e[i + 1] = r;
        if (r == 0.0) {
          d[i + 1] -= p;
          e[mm] = 0.0;
          deflated = true;
          break;
        }
        s = f / r;
        c = g / r;
        g = d[i + 1] - p;
        r = (d[i] - g) * s + 2.0 * c * b;
        p = s * r;
        d[i + 1] = g + p;
        g = c * r - b;
      }
      if (deflated) continue;
      d[l] -= p;
      e[l] = g;
      e[mm] = 0.0;
    }
  }
  return d;
}

enum class EigenMethod { Jacobi, TridiagonalQL };

inline EigenSpectrum eigen_symmetric(const SymmetricMatrix& m, EigenMethod method = EigenMethod::Jacobi,
                                     int max_sweeps = kDefaultJacobiSweeps) {
  if (method == EigenMethod::TridiagonalQL) return make_spectrum(tridiagonal_ql_eigenvalues(m));
  return make_spectrum(jacobi_eigen(m, false, max_sweeps).values);
}

/// Squared Pearson correlation between y and x.
///
/// A y with no variance beyond rounding noise is an affine (constant) response
/// and yields 1. A constant x is rejected.
inline double pearson_r2(std::span<const double> y, std::span<const double> x) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("pearson_r2: length mismatch (" + std::to_string(y.size()) + " vs " +
                                std::to_string(x.size()) + ")");
  }
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("pearson_r2: need at least 2 points");

  double mx = 0.0, my = 0.0, ymax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
    ymax = std::max(ymax, std::abs(y[i]));
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0) throw std::invalid_argument("pearson_r2: x has zero variance");

  const double noise = 16.0 * std::numeric_limits<double>::epsilon() * ymax;
  if (syy <= static_cast<double>(n) * noise * noise) return 1.0;

  const double r2 = (sxy * sxy) / (sxx * syy);
  return std::clamp(r2, 0.0, 1.0);
}

/// -sum p log2 p with 0 log 0 = 0. Entries at or below `floor` count as zero.
inline double entropy_bits(std::span<const double> p, double floor = 0.0) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("entropy_bits: negative or non-finite probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("entropy_bits: probabilities sum to " + std::to_string(sum));
  }
  double h = 0.0;
  for (double v : p) {
    if (v > floor) h -= v * std::log2(v);
  }
  return std::max(h, 0.0);
}

}  // namespace lmn
