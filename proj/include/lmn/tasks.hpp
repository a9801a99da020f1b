// SPDX-License-Identifier: Apache-2.0
//
// Algorithmic datasets: every ordered token pair of a binary operation,
// labelled by the operation's result, with a seeded train/test split.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmn/random.hpp"

namespace lmn {

enum class TaskKind { ModularAddition, PermutationS4, BitwiseXor };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::ModularAddition: return "add";
    case TaskKind::PermutationS4: return "s4";
    case TaskKind::BitwiseXor: return "xor";
  }
  return "?";
}

/// Accepts the short names used by the CLI ("add", "s4", "xor") and a few aliases.
inline TaskKind parse_task_kind(std::string_view s) {
  if (s == "add" || s == "modadd" || s == "modular-addition") return TaskKind::ModularAddition;
  if (s == "s4" || s == "perm" || s == "permutation") return TaskKind::PermutationS4;
  if (s == "xor" || s == "bitwise-xor") return TaskKind::BitwiseXor;
  throw std::invalid_argument("unknown task '" + std::string(s) + "' (expected add, s4 or xor)");
}

struct TaskSpec {
  TaskKind kind = TaskKind::ModularAddition;
  int modulus = 31;  // ModularAddition only
  int digits = 5;    // BitwiseXor only
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;

  bool operator==(const TaskSpec&) const = default;
};

inline void validate(const TaskSpec& spec) {
  if (spec.kind == TaskKind::ModularAddition && spec.modulus < 2)
    throw std::invalid_argument("TaskSpec: modulus must be >= 2");
  if (spec.kind == TaskKind::BitwiseXor && (spec.digits < 1 || spec.digits > 12))
    throw std::invalid_argument("TaskSpec: digits must be in [1, 12]");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw std::invalid_argument("TaskSpec: train_fraction must lie in (0, 1)");
}

/// Number of distinct tokens; also the output dimension of the model.
inline int vocab_size(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::ModularAddition: return spec.modulus;
    case TaskKind::PermutationS4: return 24;
    case TaskKind::BitwiseXor: return 1 << spec.digits;
  }
  return 0;
}

using Permutation4 = std::array<int, 4>;

/// The 24 elements of S4 in lexicographic order of one-line notation.
inline const std::array<Permutation4, 24>& s4_elements() {
  static const std::array<Permutation4, 24> table = [] {
    std::array<Permutation4, 24> t{};
    Permutation4 p{0, 1, 2, 3};
    std::size_t i = 0;
    do {
      t[i++] = p;
    } while (std::next_permutation(p.begin(), p.end()));
    return t;
  }();
  return table;
}

inline int s4_index(const Permutation4& p) {
  const auto& t = s4_elements();
  const auto it = std::lower_bound(t.begin(), t.end(), p);
  if (it == t.end() || *it != p) throw std::invalid_argument("s4_index: not a permutation of {0,1,2,3}");
  return static_cast<int>(it - t.begin());
}

/// Index of sigma_a o sigma_b, i.e. x -> sigma_a(sigma_b(x)).
inline int s4_compose(int a, int b) {
  const auto& t = s4_elements();
  Permutation4 c{};
  for (int x = 0; x < 4; ++x) c[x] = t[a][t[b][x]];
  return s4_index(c);
}

inline int task_label(const TaskSpec& spec, int a, int b) {
  switch (spec.kind) {
    case TaskKind::ModularAddition: return (a + b) % spec.modulus;
    case TaskKind::PermutationS4: return s4_compose(a, b);
    case TaskKind::BitwiseXor: return a ^ b;
  }
  return -1;
}

struct TokenPair {
  int a = 0;
  int b = 0;
  bool operator==(const TokenPair&) const = default;
};

struct TaskDataset {
  TaskSpec spec;
  int vocab = 0;
  std::vector<TokenPair> inputs;  // index = a * vocab + b
  std::vector<int> labels;
  std::vector<std::size_t> train_indices;  // ascending
  std::vector<std::size_t> test_indices;   // ascending

  std::size_t size() const noexcept { return inputs.size(); }
  bool operator==(const TaskDataset&) const = default;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  bool operator==(const SplitCounts&) const = default;
};

inline SplitCounts split_counts(const TaskSpec& spec) {
  validate(spec);
  const auto v = static_cast<std::size_t>(vocab_size(spec));
  const std::size_t total = v * v;
  // The small slack keeps exact products such as 0.8 * 25 from flooring to 19.
  const auto train = static_cast<std::size_t>(std::floor(spec.train_fraction * static_cast<double>(total) + 1e-9));
  if (train == 0 || train == total)
    throw std::invalid_argument("TaskSpec: train_fraction leaves an empty train or test split");
  return {train, total - train};
}

/// Enumerates all ordered pairs and splits them: the index list 0..v^2-1 is
/// shuffled with Rng(split_seed) and the first `train` entries form the
/// train split. Both index lists are returned sorted.
inline TaskDataset generate(const TaskSpec& spec) {
  const SplitCounts counts = split_counts(spec);
  TaskDataset ds;
  ds.spec = spec;
  ds.vocab = vocab_size(spec);
  const auto v = static_cast<std::size_t>(ds.vocab);
  ds.inputs.reserve(v * v);
  ds.labels.reserve(v * v);
  for (int a = 0; a < ds.vocab; ++a) {
    for (int b = 0; b < ds.vocab; ++b) {
      ds.inputs.push_back({a, b});
      ds.labels.push_back(task_label(spec, a, b));
    }
  }

  std::vector<std::size_t> order(v * v);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.split_seed);
  rng.shuffle(std::span<std::size_t>(order));
  ds.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(counts.train));
  ds.test_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(counts.train), order.end());
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.test_indices.begin(), ds.test_indices.end());
  return ds;
}

/// CSV with header token_a,token_b,label,split; one row per pair in index order.
inline void write_dataset_csv(const TaskDataset& ds, std::ostream& os) {
  std::vector<bool> is_train(ds.size(), false);
  for (std::size_t i : ds.train_indices) is_train[i] = true;
  os << "token_a,token_b,label,split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.inputs[i].a << ',' << ds.inputs[i].b << ',' << ds.labels[i] << ','
       << (is_train[i] ? "train" : "test") << '\n';
  }
}

}  // namespace lmn
