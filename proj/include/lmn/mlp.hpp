// SPDX-License-Identifier: Apache-2.0
//
// Token-embedding MLP for two-token algorithmic tasks:
//
//   a0     = concat(E[token_a], E[token_b])        (layer 0, width 2 * embed_dim)
//   h1     = silu(W1^T a0 + b1)                    (layer 1, width hidden)
//   h2     = silu(W2^T h1 + b2)                    (layer 2, width hidden)
//   logits = W3^T h2 + b3                          (layer 3, width out)
//
// Weights are stored row-major as (fan_in x fan_out). Everything runs in
// double precision; the row kernels process each row independently with a
// fixed operation order, so batched and single-sample evaluation agree
// bit for bit.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lmn/random.hpp"
#include "lmn/tasks.hpp"

namespace lmn {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

struct MlpShape {
  int vocab = 31;
  int embed_dim = 32;
  int hidden = 100;
  int out = 31;

  int input_width() const noexcept { return 2 * embed_dim; }
  bool operator==(const MlpShape&) const = default;
};

/// The architecture used for a task: 32-wide embeddings, two 100-wide hidden layers.
inline MlpShape shape_for(const TaskSpec& spec, int embed_dim = 32, int hidden = 100) {
  const int v = vocab_size(spec);
  return {v, embed_dim, hidden, v};
}

/// All trainable tensors. Also used as the gradient and moment container.
struct MlpParams {
  std::vector<double> embedding;  // vocab x embed_dim
  std::vector<double> w1, b1;     // (2 embed_dim) x hidden, hidden
  std::vector<double> w2, b2;     // hidden x hidden, hidden
  std::vector<double> w3, b3;     // hidden x out, out

  static MlpParams zeros(const MlpShape& s) {
    const auto e = static_cast<std::size_t>(s.embed_dim), h = static_cast<std::size_t>(s.hidden),
               o = static_cast<std::size_t>(s.out), v = static_cast<std::size_t>(s.vocab);
    MlpParams p;
    p.embedding.assign(v * e, 0.0);
    p.w1.assign(2 * e * h, 0.0);
    p.b1.assign(h, 0.0);
    p.w2.assign(h * h, 0.0);
    p.b2.assign(h, 0.0);
    p.w3.assign(h * o, 0.0);
    p.b3.assign(o, 0.0);
    return p;
  }

  /// Visits tensors in checkpoint order: embedding, w1, b1, w2, b2, w3, b3.
  /// The callback receives (name, tensor, is_bias).
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](std::string_view, const std::vector<double>& t, bool) { n += t.size(); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(count());
    for_each([&](std::string_view, const std::vector<double>& t, bool) { out.insert(out.end(), t.begin(), t.end()); });
    return out;
  }

  bool operator==(const MlpParams&) const = default;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("embedding", self.embedding, false);
    f("w1", self.w1, false);
    f("b1", self.b1, true);
    f("w2", self.w2, false);
    f("b2", self.b2, true);
    f("w3", self.w3, false);
    f("b3", self.b3, true);
  }
};

struct MlpModel {
  MlpShape shape;
  MlpParams params;

  static MlpModel zeros(const MlpShape& s) { return {s, MlpParams::zeros(s)}; }

  /// Width of the activation at layer 0 (embedding concat), 1, 2 (hidden) or 3 (logits).
  int layer_width(int layer) const {
    switch (layer) {
      case 0: return shape.input_width();
      case 1:
      case 2: return shape.hidden;
      case 3: return shape.out;
    }
    throw std::invalid_argument("layer index must be in [0, 3], got " + std::to_string(layer));
  }

  bool operator==(const MlpModel&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.2;
  int steps = 20000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t init_seed = 0;
  double init_scale = 1.0;
  bool decay_embeddings = true;
  std::size_t batch_size = 0;  // 0 = full batch over the train split
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
  if (cfg.steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be > 0");
  if (!(cfg.init_scale > 0.0)) throw std::invalid_argument("TrainConfig: init_scale must be > 0");
}

/// Weights ~ U(-s, s) with s = init_scale / sqrt(fan_in); biases zero;
/// embeddings ~ init_scale * N(0, 1) / sqrt(embed_dim). Draw order:
/// embedding, w1, w2, w3, all from Rng(init_seed).
inline MlpModel init_model(const MlpShape& shape, const TrainConfig& cfg) {
  validate(cfg);
  MlpModel m = MlpModel::zeros(shape);
  Rng rng(cfg.init_seed);
  const double emb_scale = cfg.init_scale / std::sqrt(static_cast<double>(shape.embed_dim));
  for (double& x : m.params.embedding) x = emb_scale * rng.normal();
  auto fill = [&](std::vector<double>& w, int fan_in) {
    const double s = cfg.init_scale / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w) x = rng.uniform(-s, s);
  };
  fill(m.params.w1, shape.input_width());
  fill(m.params.w2, shape.hidden);
  fill(m.params.w3, shape.hidden);
  return m;
}

inline MlpModel init_model(const TaskSpec& spec, const TrainConfig& cfg) { return init_model(shape_for(spec), cfg); }

namespace detail {

/// y[r, :] = bias + sum_k x[r, k] * w[k, :] for each of `rows` rows.
inline void affine_rows(std::span<const double> x, std::size_t rows, std::size_t in, std::span<const double> w,
                        std::span<const double> bias, std::size_t out, std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out;
    const double* xr = x.data() + r * in;
    std::copy(bias.begin(), bias.end(), yr);
    for (std::size_t k = 0; k < in; ++k) {
      const double xk = xr[k];
      const double* wk = w.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xk * wk[j];
    }
  }
}

inline void silu_inplace(std::span<double> v) {
  for (double& x : v) x = silu(x);
}

inline void check_layer(int layer) {
  if (layer < 0 || layer > 2) throw std::invalid_argument("layer index must be 0, 1 or 2, got " + std::to_string(layer));
}

}  // namespace detail

/// Pre-activation of the layer after `layer` for a block of row activations:
/// the affine map W_{layer+1}^T h + b_{layer+1}.
inline std::vector<double> next_preactivation_rows(const MlpModel& m, int layer, std::span<const double> h,
                                                   std::size_t rows) {
  detail::check_layer(layer);
  const auto width = static_cast<std::size_t>(m.layer_width(layer));
  if (h.size() != rows * width) {
    throw std::invalid_argument("activation size " + std::to_string(h.size()) + " does not match " +
                                std::to_string(rows) + " rows of layer " + std::to_string(layer) + " width " +
                                std::to_string(width));
  }
  const auto& p = m.params;
  const std::vector<double>* w[] = {&p.w1, &p.w2, &p.w3};
  const std::vector<double>* b[] = {&p.b1, &p.b2, &p.b3};
  const auto out = b[layer]->size();
  std::vector<double> z(rows * out);
  detail::affine_rows(h, rows, width, *w[layer], *b[layer], out, z);
  return z;
}

/// Continues from the pre-activation produced by next_preactivation_rows to logits.
inline std::vector<double> logits_from_preactivation_rows(const MlpModel& m, int layer, std::vector<double> z,
                                                          std::size_t rows) {
  detail::check_layer(layer);
  const auto h = static_cast<std::size_t>(m.shape.hidden), o = static_cast<std::size_t>(m.shape.out);
  if (layer == 2) return z;
  detail::silu_inplace(z);
  if (layer == 1) {
    std::vector<double> logits(rows * o);
    detail::affine_rows(z, rows, h, m.params.w3, m.params.b3, o, logits);
    return logits;
  }
  std::vector<double> z2(rows * h);
  detail::affine_rows(z, rows, h, m.params.w2, m.params.b2, h, z2);
  detail::silu_inplace(z2);
  std::vector<double> logits(rows * o);
  detail::affine_rows(z2, rows, h, m.params.w3, m.params.b3, o, logits);
  return logits;
}

/// Runs the sub-network above `layer` on `rows` stacked activations.
inline std::vector<double> forward_rows_from_layer(const MlpModel& m, int layer, std::span<const double> h,
                                                   std::size_t rows) {
  return logits_from_preactivation_rows(m, layer, next_preactivation_rows(m, layer, h, rows), rows);
}

inline std::vector<double> forward_from_layer(const MlpModel& m, int layer, std::span<const double> activation) {
  return forward_rows_from_layer(m, layer, activation, 1);
}

struct Activations {
  std::vector<double> a0, h1, h2, logits;

  const std::vector<double>& layer(int k) const {
    switch (k) {
      case 0: return a0;
      case 1: return h1;
      case 2: return h2;
      case 3: return logits;
    }
    throw std::invalid_argument("layer index must be in [0, 3], got " + std::to_string(k));
  }
};

inline void check_token(const MlpModel& m, int t) {
  if (t < 0 || t >= m.shape.vocab)
    throw std::invalid_argument("token " + std::to_string(t) + " outside [0, " + std::to_string(m.shape.vocab) + ")");
}

inline std::vector<double> embed_pair(const MlpModel& m, int token_a, int token_b) {
  check_token(m, token_a);
  check_token(m, token_b);
  const auto e = static_cast<std::size_t>(m.shape.embed_dim);
  std::vector<double> a0(2 * e);
  const auto& emb = m.params.embedding;
  std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(token_a * e), e, a0.begin());
  std::copy_n(emb.begin() + static_cast<std::ptrdiff_t>(token_b * e), e, a0.begin() + static_cast<std::ptrdiff_t>(e));
  return a0;
}

inline Activations forward(const MlpModel& m, int token_a, int token_b) {
  Activations act;
  act.a0 = embed_pair(m, token_a, token_b);
  act.h1 = next_preactivation_rows(m, 0, act.a0, 1);
  detail::silu_inplace(act.h1);
  act.h2 = next_preactivation_rows(m, 1, act.h1, 1);
  detail::silu_inplace(act.h2);
  act.logits = next_preactivation_rows(m, 2, act.h2, 1);
  return act;
}

struct Example {
  int a = 0;
  int b = 0;
  int label = 0;
};

inline std::vector<Example> examples_for(const TaskDataset& ds, std::span<const std::size_t> indices) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back({ds.inputs[i].a, ds.inputs[i].b, ds.labels[i]});
  return out;
}

struct BatchResult {
  double loss = 0.0;
  std::size_t correct = 0;  // argmax hits, ties to the lowest class
  MlpParams grads;          // empty unless requested
};

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

/// Mean cross-entropy over the batch, argmax hit count and, optionally, the
/// exact gradient of the mean loss.
inline BatchResult evaluate_batch(const MlpModel& m, std::span<const Example> batch, bool with_grads) {
  if (batch.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
  const auto& s = m.shape;
  const auto& p = m.params;
  const std::size_t n = batch.size();
  const auto e = static_cast<std::size_t>(s.embed_dim), in = 2 * e, h = static_cast<std::size_t>(s.hidden),
             o = static_cast<std::size_t>(s.out);

  std::vector<double> a0(n * in);
  for (std::size_t r = 0; r < n; ++r) {
    const Example& ex = batch[r];
    check_token(m, ex.a);
    check_token(m, ex.b);
    if (ex.label < 0 || ex.label >= s.out) throw std::invalid_argument("label out of range: " + std::to_string(ex.label));
    std::copy_n(p.embedding.begin() + static_cast<std::ptrdiff_t>(ex.a * e), e, a0.begin() + static_cast<std::ptrdiff_t>(r * in));
    std::copy_n(p.embedding.begin() + static_cast<std::ptrdiff_t>(ex.b * e), e,
                a0.begin() + static_cast<std::ptrdiff_t>(r * in + e));
  }
  std::vector<double> z1(n * h), h1(n * h), z2(n * h), h2(n * h), logits(n * o);
  detail::affine_rows(a0, n, in, p.w1, p.b1, h, z1);
  std::transform(z1.begin(), z1.end(), h1.begin(), silu);
  detail::affine_rows(h1, n, h, p.w2, p.b2, h, z2);
  std::transform(z2.begin(), z2.end(), h2.begin(), silu);
  detail::affine_rows(h2, n, h, p.w3, p.b3, o, logits);

  BatchResult res;
  double total = 0.0;
  // logits become dL/dlogits in place.
  for (std::size_t r = 0; r < n; ++r) {
    std::span<double> row(logits.data() + r * o, o);
    const auto label = static_cast<std::size_t>(batch[r].label);
    if (argmax(row) == label) ++res.correct;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    total += lse - row[label];
    if (with_grads) {
      for (std::size_t j = 0; j < o; ++j) row[j] = std::exp(row[j] - lse) / static_cast<double>(n);
      row[label] -= 1.0 / static_cast<double>(n);
    }
  }
  res.loss = total / static_cast<double>(n);
  if (!with_grads) return res;

  MlpParams g = MlpParams::zeros(s);
  const auto& d3 = logits;

  // W3, b3 and dh2 = d3 W3^T.
  auto accumulate_outer = [](std::span<const double> x, std::span<const double> d, std::size_t rows, std::size_t fin,
                             std::size_t fout, std::vector<double>& gw, std::vector<double>& gb) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * fin;
      const double* dr = d.data() + r * fout;
      for (std::size_t k = 0; k < fin; ++k) {
        const double xk = xr[k];
        double* gk = gw.data() + k * fout;
        for (std::size_t j = 0; j < fout; ++j) gk[j] += xk * dr[j];
      }
      for (std::size_t j = 0; j < fout; ++j) gb[j] += dr[j];
    }
  };
  // dx[r, :] = sum_j d[r, j] * w[:, j], computed against the transposed weight.
  auto backprop_input = [](std::span<const double> d, std::size_t rows, std::span<const double> w, std::size_t fin,
                           std::size_t fout) {
    std::vector<double> wt(fout * fin);
    for (std::size_t k = 0; k < fin; ++k)
      for (std::size_t j = 0; j < fout; ++j) wt[j * fin + k] = w[k * fout + j];
    std::vector<double> dx(rows * fin, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      double* dxr = dx.data() + r * fin;
      const double* dr = d.data() + r * fout;
      for (std::size_t j = 0; j < fout; ++j) {
        const double dj = dr[j];
        const double* wj = wt.data() + j * fin;
        for (std::size_t k = 0; k < fin; ++k) dxr[k] += dj * wj[k];
      }
    }
    return dx;
  };

  accumulate_outer(h2, d3, n, h, o, g.w3, g.b3);
  std::vector<double> d2 = backprop_input(d3, n, p.w3, h, o);
  for (std::size_t i = 0; i < d2.size(); ++i) d2[i] *= silu_grad(z2[i]);
  accumulate_outer(h1, d2, n, h, h, g.w2, g.b2);
  std::vector<double> d1 = backprop_input(d2, n, p.w2, h, h);
  for (std::size_t i = 0; i < d1.size(); ++i) d1[i] *= silu_grad(z1[i]);
  accumulate_outer(a0, d1, n, in, h, g.w1, g.b1);
  const std::vector<double> d0 = backprop_input(d1, n, p.w1, in, h);
  for (std::size_t r = 0; r < n; ++r) {
    const double* dr = d0.data() + r * in;
    double* ga = g.embedding.data() + static_cast<std::size_t>(batch[r].a) * e;
    double* gb = g.embedding.data() + static_cast<std::size_t>(batch[r].b) * e;
    for (std::size_t k = 0; k < e; ++k) ga[k] += dr[k];
    for (std::size_t k = 0; k < e; ++k) gb[k] += dr[e + k];
  }
  res.grads = std::move(g);
  return res;
}

struct LossAndGrads {
  double loss = 0.0;
  MlpParams grads;
};

inline LossAndGrads loss_and_grads(const MlpModel& m, std::span<const Example> batch) {
  BatchResult r = evaluate_batch(m, batch, true);
  return {r.loss, std::move(r.grads)};
}

struct AdamState {
  MlpParams m;
  MlpParams v;
  long step = 0;

  static AdamState for_model(const MlpModel& model) {
    return {MlpParams::zeros(model.shape), MlpParams::zeros(model.shape), 0};
  }
};

/// One decoupled-weight-decay Adam update:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
/// Biases are never decayed; embeddings are decayed when cfg.decay_embeddings.
inline void adamw_step(MlpModel& model, const MlpParams& grads, AdamState& state, const TrainConfig& cfg) {
  const long t = state.step + 1;
  grads.for_each([&](std::string_view name, const std::vector<double>& g, bool) {
    for (double x : g) {
      if (!std::isfinite(x))
        throw NonFiniteError("adamw_step: non-finite gradient in " + std::string(name) + " at step " + std::to_string(t));
    }
  });
  state.step = t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

  std::vector<const std::vector<double>*> gs;
  grads.for_each([&](std::string_view, const std::vector<double>& g, bool) { gs.push_back(&g); });
  std::vector<std::vector<double>*> ms, vs;
  state.m.for_each([&](std::string_view, std::vector<double>& x, bool) { ms.push_back(&x); });
  state.v.for_each([&](std::string_view, std::vector<double>& x, bool) { vs.push_back(&x); });

  std::size_t idx = 0;
  model.params.for_each([&](std::string_view name, std::vector<double>& theta, bool bias) {
    const std::vector<double>& g = *gs[idx];
    std::vector<double>& mt = *ms[idx];
    std::vector<double>& vt = *vs[idx];
    ++idx;
    if (g.size() != theta.size() || mt.size() != theta.size() || vt.size() != theta.size())
      throw std::invalid_argument("adamw_step: shape mismatch in " + std::string(name));
    const bool decay = !bias && (name != "embedding" || cfg.decay_embeddings);
    const double wd = decay ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g[i];
      vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = mt[i] / c1;
      const double vhat = vt[i] / c2;
      theta[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + wd * theta[i]);
    }
  });
}

/// Fraction of the listed samples whose argmax logit (lowest index on ties)
/// equals the label.
inline double accuracy(const MlpModel& m, std::span<const std::size_t> indices, const TaskDataset& ds) {
  if (indices.empty()) throw std::invalid_argument("accuracy: empty index list");
  const auto batch = examples_for(ds, indices);
  const auto r = evaluate_batch(m, batch, false);
  return static_cast<double>(r.correct) / static_cast<double>(indices.size());
}

inline double l2_norm(const MlpModel& m) {
  double s = 0.0;
  m.params.for_each([&](std::string_view, const std::vector<double>& t, bool) {
    for (double x : t) s += x * x;
  });
  return std::sqrt(s);
}

}  // namespace lmn
