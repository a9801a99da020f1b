// SPDX-License-Identifier: Apache-2.0
//
// Text and image dumps of connectivity matrices and their spectra.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmn/linalg.hpp"
#include "lmn/spectral.hpp"

namespace lmn {

/// Shortest-round-trip-safe decimal form of a double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  if (used != s.size()) throw std::invalid_argument("trailing characters in number: '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// N lines of N comma-separated values.
inline void write_matrix_csv(const SymmetricMatrix& m, std::ostream& os) {
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) os << ',';
      os << format_double(m(i, j));
    }
    os << '\n';
  }
}

inline SymmetricMatrix read_matrix_csv(std::istream& is) {
  std::vector<double> values;
  std::size_t n = 0;
  std::string line;
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (rows == 0) n = cells.size();
    if (cells.size() != n) throw std::invalid_argument("read_matrix_csv: ragged row " + std::to_string(rows));
    for (const auto& c : cells) values.push_back(parse_double(c));
    ++rows;
  }
  if (rows != n || n == 0) throw std::invalid_argument("read_matrix_csv: matrix is not square");
  return SymmetricMatrix::from_row_major(n, values);
}

/// Binary 8-bit graymap (P5); white = connectivity 1, black = 0. When
/// `order` is non-empty the matrix is shown with rows and columns permuted.
inline void write_pgm(const SymmetricMatrix& m, std::ostream& os, const std::vector<std::size_t>& order = {}) {
  const std::size_t n = m.size();
  std::vector<std::size_t> idx = order;
  if (idx.empty()) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  if (idx.size() != n) throw std::invalid_argument("write_pgm: order has wrong length");
  os << "P5\n" << n << ' ' << n << "\n255\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = std::clamp(m(idx[i], idx[j]), 0.0, 1.0);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
}

/// rank,eigenvalue,normalized
inline void write_spectrum_csv(const EigenSpectrum& s, std::ostream& os) {
  os << "rank,eigenvalue,normalized\n";
  for (std::size_t i = 0; i < s.eigenvalues.size(); ++i)
    os << i << ',' << format_double(s.eigenvalues[i]) << ',' << format_double(s.normalized[i]) << '\n';
}

/// position,sample_index,cluster in display (permuted) order.
inline void write_clusters_csv(const SpectralClustering& c, const std::vector<std::size_t>& sample_indices,
                               std::ostream& os) {
  os << "position,sample_index,cluster\n";
  for (std::size_t pos = 0; pos < c.permutation.size(); ++pos) {
    const std::size_t i = c.permutation[pos];
    os << pos << ',' << (i < sample_indices.size() ? sample_indices[i] : i) << ',' << c.labels[i] << '\n';
  }
}

}  // namespace lmn
