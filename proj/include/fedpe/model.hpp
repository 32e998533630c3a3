// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fedpe/dataset.hpp"
#include "fedpe/rng.hpp"

namespace fedpe {

// Coupled input/forget gate recurrent language model with tied
// input/output embeddings and a recurrent projection. Per step, with
// x = embedding of the input token and z = [x ; h_prev]:
//
//   i = sigmoid(U_i z + b_i)            input gate (forget gate = 1 - i)
//   g = tanh(U_c z + b_c)               cell candidate
//   c = (1 - i) * c_prev + i * g
//   o = sigmoid(U_o z + b_o)            output gate
//   h = P (o * tanh(c))                 projected state, fed back and emitted
//   logits[v] = <embedding row v, h>    tied output projection
//
// Only the three gates carry biases; embedding and projection do not.
// All arithmetic is double precision.

struct ModelConfig {
  std::int64_t vocab_size = 0;     // V
  std::int64_t embedding_dim = 0;  // D
  std::int64_t hidden_units = 0;   // H
  std::uint64_t seed = 0;
};

// V*D + 3*(H*2D + H) + H*D scalars.
inline std::int64_t count_params(const ModelConfig& cfg) {
  const std::int64_t v = cfg.vocab_size, d = cfg.embedding_dim,
               h = cfg.hidden_units;
  return v * d + 3 * (h * 2 * d + h) + h * d;
}

// The full parameter collection, one tensor per field. Field order is
// the checkpoint serialization order. Matrices are row-major:
// `embedding` is token-major (V rows of D), gate matrices are H rows of
// 2D over z = [x ; h_prev], `projection` is D rows of H.
struct ParamSet {
  std::int64_t vocab_size = 0;
  std::int64_t embedding_dim = 0;
  std::int64_t hidden_units = 0;

  std::vector<double> embedding;      // V x D
  std::vector<double> gate_input_w;   // H x 2D
  std::vector<double> gate_input_b;   // H
  std::vector<double> gate_output_w;  // H x 2D
  std::vector<double> gate_output_b;  // H
  std::vector<double> cell_w;         // H x 2D
  std::vector<double> cell_b;         // H
  std::vector<double> projection;     // D x H

  static ParamSet zeros(const ModelConfig& cfg) {
    if (cfg.vocab_size < 1 || cfg.embedding_dim < 1 || cfg.hidden_units < 1)
      throw std::invalid_argument("model dimensions must be positive");
    ParamSet p;
    p.vocab_size = cfg.vocab_size;
    p.embedding_dim = cfg.embedding_dim;
    p.hidden_units = cfg.hidden_units;
    const auto v = static_cast<std::size_t>(cfg.vocab_size);
    const auto d = static_cast<std::size_t>(cfg.embedding_dim);
    const auto h = static_cast<std::size_t>(cfg.hidden_units);
    p.embedding.assign(v * d, 0.0);
    p.gate_input_w.assign(h * 2 * d, 0.0);
    p.gate_input_b.assign(h, 0.0);
    p.gate_output_w.assign(h * 2 * d, 0.0);
    p.gate_output_b.assign(h, 0.0);
    p.cell_w.assign(h * 2 * d, 0.0);
    p.cell_b.assign(h, 0.0);
    p.projection.assign(d * h, 0.0);
    return p;
  }

  ModelConfig config() const {
    return {vocab_size, embedding_dim, hidden_units, 0};
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto* t : tensors()) n += static_cast<std::int64_t>(t->size());
    return n;
  }

  std::array<std::vector<double>*, 8> tensors() {
    return {&embedding,     &gate_input_w, &gate_input_b, &gate_output_w,
            &gate_output_b, &cell_w,       &cell_b,       &projection};
  }
  std::array<const std::vector<double>*, 8> tensors() const {
    return {&embedding,     &gate_input_w, &gate_input_b, &gate_output_w,
            &gate_output_b, &cell_w,       &cell_b,       &projection};
  }

  bool same_shape(const ParamSet& o) const {
    return vocab_size == o.vocab_size && embedding_dim == o.embedding_dim &&
           hidden_units == o.hidden_units;
  }

  std::span<const double> embedding_row(std::int64_t token) const {
    return {embedding.data() + token * embedding_dim,
            static_cast<std::size_t>(embedding_dim)};
  }
  std::span<double> embedding_row(std::int64_t token) {
    return {embedding.data() + token * embedding_dim,
            static_cast<std::size_t>(embedding_dim)};
  }
};

// Gradients carry the same shape family as the parameters they refer to.
using ParamGradient = ParamSet;

// Entries uniform in [-0.05, 0.05], deterministic in cfg.seed. Tensors
// are filled in serialization order.
inline ParamSet init_params(const ModelConfig& cfg) {
  ParamSet p = ParamSet::zeros(cfg);
  Rng rng(cfg.seed);
  for (auto* t : p.tensors())
    for (double& x : *t) x = rng.unit() * 0.1 - 0.05;
  return p;
}

struct RecurrentState {
  std::vector<double> cell;    // H
  std::vector<double> hidden;  // D

  static RecurrentState zero(const ParamSet& p) {
    RecurrentState s;
    s.cell.assign(static_cast<std::size_t>(p.hidden_units), 0.0);
    s.hidden.assign(static_cast<std::size_t>(p.embedding_dim), 0.0);
    return s;
  }
};

// Instrumentation hook: records the gate activations and the forget
// coefficient actually multiplied into c_prev at one step.
struct StepTrace {
  std::vector<double> input_gate;
  std::vector<double> forget_coeff;
  std::vector<double> cell_candidate;
  std::vector<double> output_gate;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dot(const double* a, const double* b, std::int64_t n) {
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// One cell step into caller-provided buffers. z_buf receives
// [x ; h_prev] (length 2D); i/g/o/c_new are length H, h_new length D,
// logits length V. c_prev/h_prev are read before any output is written.
inline void cifg_step(const ParamSet& p, const double* c_prev,
                      const double* h_prev, std::int32_t token, double* z_buf,
                      double* i_buf, double* g_buf, double* o_buf,
                      double* c_new, double* h_new, double* logits,
                      StepTrace* trace = nullptr) {
  const std::int64_t d = p.embedding_dim, h = p.hidden_units,
               v = p.vocab_size;
  if (token < 0 || token >= v)
    throw std::invalid_argument("token id out of range");
  const auto x = p.embedding_row(token);
  std::copy(x.begin(), x.end(), z_buf);
  std::copy(h_prev, h_prev + d, z_buf + d);

  for (std::int64_t r = 0; r < h; ++r) {
    i_buf[r] = sigmoid(p.gate_input_b[static_cast<std::size_t>(r)] +
                       dot(&p.gate_input_w[static_cast<std::size_t>(r * 2 * d)],
                           z_buf, 2 * d));
    g_buf[r] = std::tanh(p.cell_b[static_cast<std::size_t>(r)] +
                         dot(&p.cell_w[static_cast<std::size_t>(r * 2 * d)],
                             z_buf, 2 * d));
    o_buf[r] = sigmoid(p.gate_output_b[static_cast<std::size_t>(r)] +
                       dot(&p.gate_output_w[static_cast<std::size_t>(r * 2 * d)],
                           z_buf, 2 * d));
    const double forget = 1.0 - i_buf[r];
    c_new[r] = forget * c_prev[r] + i_buf[r] * g_buf[r];
    if (trace) {
      trace->input_gate.push_back(i_buf[r]);
      trace->forget_coeff.push_back(forget);
      trace->cell_candidate.push_back(g_buf[r]);
      trace->output_gate.push_back(o_buf[r]);
    }
  }
  // h = P (o * tanh(c))
  std::vector<double> r_vec(static_cast<std::size_t>(h));
  for (std::int64_t r = 0; r < h; ++r) r_vec[static_cast<std::size_t>(r)] = o_buf[r] * std::tanh(c_new[r]);
  for (std::int64_t dd = 0; dd < d; ++dd)
    h_new[dd] = dot(&p.projection[static_cast<std::size_t>(dd * h)], r_vec.data(), h);
  if (logits)
    for (std::int64_t t = 0; t < v; ++t)
      logits[t] = dot(p.embedding.data() + t * d, h_new, d);
}

// Softmax probabilities and log p[target]; max-shifted for stability.
inline double softmax_logprob(std::span<const double> logits,
                              std::int32_t target, double* probs) {
  double mx = logits[0];
  for (double l : logits) mx = l > mx ? l : mx;
  double denom = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    probs[v] = std::exp(logits[v] - mx);
    denom += probs[v];
  }
  for (std::size_t v = 0; v < logits.size(); ++v) probs[v] /= denom;
  return (logits[static_cast<std::size_t>(target)] - mx) - std::log(denom);
}

}  // namespace detail

struct StepResult {
  RecurrentState state;
  std::vector<double> logits;
};

inline StepResult step_cell(const ParamSet& p, const RecurrentState& state,
                            std::int32_t token, StepTrace* trace = nullptr) {
  StepResult out;
  out.state = RecurrentState::zero(p);
  out.logits.assign(static_cast<std::size_t>(p.vocab_size), 0.0);
  std::vector<double> z(static_cast<std::size_t>(2 * p.embedding_dim));
  std::vector<double> i(static_cast<std::size_t>(p.hidden_units));
  std::vector<double> g(static_cast<std::size_t>(p.hidden_units));
  std::vector<double> o(static_cast<std::size_t>(p.hidden_units));
  detail::cifg_step(p, state.cell.data(), state.hidden.data(), token, z.data(),
                    i.data(), g.data(), o.data(), out.state.cell.data(),
                    out.state.hidden.data(), out.logits.data(), trace);
  return out;
}

// Everything backward() needs, stored per step with row-major stride.
struct ForwardCache {
  std::int64_t steps = 0;
  std::vector<std::int32_t> inputs;   // [BOS, w1..wn]
  std::vector<std::int32_t> targets;  // [w1..wn, EOS]
  std::vector<double> z;              // steps x 2D
  std::vector<double> gate_i;         // steps x H
  std::vector<double> cand;           // steps x H
  std::vector<double> gate_o;         // steps x H
  std::vector<double> cell;           // steps x H
  std::vector<double> hidden;         // steps x D
  std::vector<double> probs;          // steps x V
};

// Mean cross-entropy over the sentence's targets. Inputs are the
// BOS-prefixed sentence, targets the EOS-suffixed one.
inline std::pair<double, ForwardCache> forward_loss(const ParamSet& p,
                                                    const Sentence& sentence) {
  if (sentence.empty())
    throw std::invalid_argument("forward_loss: empty sentence");
  const std::int64_t d = p.embedding_dim, h = p.hidden_units, v = p.vocab_size;
  const std::int64_t steps = static_cast<std::int64_t>(sentence.size()) + 1;

  ForwardCache cache;
  cache.steps = steps;
  cache.inputs.reserve(static_cast<std::size_t>(steps));
  cache.inputs.push_back(kBosId);
  cache.inputs.insert(cache.inputs.end(), sentence.begin(), sentence.end());
  cache.targets.assign(sentence.begin(), sentence.end());
  cache.targets.push_back(kEosId);
  cache.z.resize(static_cast<std::size_t>(steps * 2 * d));
  cache.gate_i.resize(static_cast<std::size_t>(steps * h));
  cache.cand.resize(static_cast<std::size_t>(steps * h));
  cache.gate_o.resize(static_cast<std::size_t>(steps * h));
  cache.cell.resize(static_cast<std::size_t>(steps * h));
  cache.hidden.resize(static_cast<std::size_t>(steps * d));
  cache.probs.resize(static_cast<std::size_t>(steps * v));

  std::vector<double> logits(static_cast<std::size_t>(v));
  std::vector<double> zero_c(static_cast<std::size_t>(h), 0.0);
  std::vector<double> zero_h(static_cast<std::size_t>(d), 0.0);

  double nll = 0.0;
  for (std::int64_t t = 0; t < steps; ++t) {
    const double* c_prev = t == 0 ? zero_c.data() : &cache.cell[static_cast<std::size_t>((t - 1) * h)];
    const double* h_prev = t == 0 ? zero_h.data() : &cache.hidden[static_cast<std::size_t>((t - 1) * d)];
    const std::int32_t target = cache.targets[static_cast<std::size_t>(t)];
    if (target < 0 || target >= v)
      throw std::invalid_argument("target token id out of range");
    detail::cifg_step(p, c_prev, h_prev, cache.inputs[static_cast<std::size_t>(t)],
                      &cache.z[static_cast<std::size_t>(t * 2 * d)],
                      &cache.gate_i[static_cast<std::size_t>(t * h)],
                      &cache.cand[static_cast<std::size_t>(t * h)],
                      &cache.gate_o[static_cast<std::size_t>(t * h)],
                      &cache.cell[static_cast<std::size_t>(t * h)],
                      &cache.hidden[static_cast<std::size_t>(t * d)], logits.data());
    nll -= detail::softmax_logprob(logits, target,
                                   &cache.probs[static_cast<std::size_t>(t * v)]);
  }
  return {nll / static_cast<double>(steps), std::move(cache)};
}

// Exact analytic gradient of the mean cross-entropy, backpropagated
// through every timestep. The tied embedding accumulates both its
// output-side term (softmax error times hidden state, every column) and
// its input-side term (d z / d x, input columns only).
inline ParamGradient backward(const ParamSet& p, const ForwardCache& cache) {
  const std::int64_t d = p.embedding_dim, h = p.hidden_units, v = p.vocab_size;
  const std::int64_t steps = cache.steps;
  const double inv_steps = 1.0 / static_cast<double>(steps);

  ParamGradient grad = ParamSet::zeros(p.config());

  std::vector<double> dh(static_cast<std::size_t>(d), 0.0);       // dL/dh_t
  std::vector<double> carry_dh(static_cast<std::size_t>(d), 0.0); // from z_{t+1}
  std::vector<double> carry_dc(static_cast<std::size_t>(h), 0.0); // from c_{t+1}
  std::vector<double> dr(static_cast<std::size_t>(h));
  std::vector<double> dc(static_cast<std::size_t>(h));
  std::vector<double> du(static_cast<std::size_t>(h));
  std::vector<double> dv(static_cast<std::size_t>(h));
  std::vector<double> ds(static_cast<std::size_t>(h));
  std::vector<double> dz(static_cast<std::size_t>(2 * d));

  for (std::int64_t t = steps - 1; t >= 0; --t) {
    const double* z_t = &cache.z[static_cast<std::size_t>(t * 2 * d)];
    const double* i_t = &cache.gate_i[static_cast<std::size_t>(t * h)];
    const double* g_t = &cache.cand[static_cast<std::size_t>(t * h)];
    const double* o_t = &cache.gate_o[static_cast<std::size_t>(t * h)];
    const double* c_t = &cache.cell[static_cast<std::size_t>(t * h)];
    const double* h_t = &cache.hidden[static_cast<std::size_t>(t * d)];
    const double* p_t = &cache.probs[static_cast<std::size_t>(t * v)];
    const std::int32_t target = cache.targets[static_cast<std::size_t>(t)];
    const double* c_prev =
        t == 0 ? nullptr : &cache.cell[static_cast<std::size_t>((t - 1) * h)];

    // Output side: delta = (softmax - onehot) / steps.
    // dh = sum_v delta[v] * embedding_row(v); gW_row(v) += delta[v] * h_t.
    std::copy(carry_dh.begin(), carry_dh.end(), dh.begin());
    for (std::int64_t tok = 0; tok < v; ++tok) {
      double delta = p_t[tok] * inv_steps;
      if (tok == target) delta -= inv_steps;
      const double* w_row = p.embedding.data() + tok * d;
      double* gw_row = grad.embedding.data() + tok * d;
      for (std::int64_t k = 0; k < d; ++k) {
        dh[static_cast<std::size_t>(k)] += delta * w_row[k];
        gw_row[k] += delta * h_t[k];
      }
    }

    // h = P r with r = o * tanh(c):  dr = P^T dh,  gP += dh r^T.
    std::fill(dr.begin(), dr.end(), 0.0);
    for (std::int64_t dd = 0; dd < d; ++dd) {
      const double* p_row = &p.projection[static_cast<std::size_t>(dd * h)];
      double* gp_row = &grad.projection[static_cast<std::size_t>(dd * h)];
      const double dhd = dh[static_cast<std::size_t>(dd)];
      for (std::int64_t r = 0; r < h; ++r) {
        const double m = std::tanh(c_t[r]);
        dr[static_cast<std::size_t>(r)] += p_row[r] * dhd;
        gp_row[r] += dhd * o_t[r] * m;
      }
    }

    std::fill(dz.begin(), dz.end(), 0.0);
    for (std::int64_t r = 0; r < h; ++r) {
      const double m = std::tanh(c_t[r]);
      const double drr = dr[static_cast<std::size_t>(r)];
      const double do_r = drr * m;
      const double dm_r = drr * o_t[r];
      ds[static_cast<std::size_t>(r)] = do_r * o_t[r] * (1.0 - o_t[r]);
      dc[static_cast<std::size_t>(r)] =
          dm_r * (1.0 - m * m) + carry_dc[static_cast<std::size_t>(r)];
      const double cp = c_prev ? c_prev[r] : 0.0;
      const double di_r = dc[static_cast<std::size_t>(r)] * (g_t[r] - cp);
      const double dg_r = dc[static_cast<std::size_t>(r)] * i_t[r];
      carry_dc[static_cast<std::size_t>(r)] =
          dc[static_cast<std::size_t>(r)] * (1.0 - i_t[r]);
      du[static_cast<std::size_t>(r)] = di_r * i_t[r] * (1.0 - i_t[r]);
      dv[static_cast<std::size_t>(r)] = dg_r * (1.0 - g_t[r] * g_t[r]);

      // Gate weight/bias gradients and the shared dz accumulation.
      double* gui = &grad.gate_input_w[static_cast<std::size_t>(r * 2 * d)];
      double* guo = &grad.gate_output_w[static_cast<std::size_t>(r * 2 * d)];
      double* guc = &grad.cell_w[static_cast<std::size_t>(r * 2 * d)];
      const double* ui = &p.gate_input_w[static_cast<std::size_t>(r * 2 * d)];
      const double* uo = &p.gate_output_w[static_cast<std::size_t>(r * 2 * d)];
      const double* uc = &p.cell_w[static_cast<std::size_t>(r * 2 * d)];
      const double dur = du[static_cast<std::size_t>(r)];
      const double dsr = ds[static_cast<std::size_t>(r)];
      const double dvr = dv[static_cast<std::size_t>(r)];
      for (std::int64_t k = 0; k < 2 * d; ++k) {
        gui[k] += dur * z_t[k];
        guo[k] += dsr * z_t[k];
        guc[k] += dvr * z_t[k];
        dz[static_cast<std::size_t>(k)] += ui[k] * dur + uo[k] * dsr + uc[k] * dvr;
      }
      grad.gate_input_b[static_cast<std::size_t>(r)] += dur;
      grad.gate_output_b[static_cast<std::size_t>(r)] += dsr;
      grad.cell_b[static_cast<std::size_t>(r)] += dvr;
    }

    // Input side of the tied embedding, and the recurrent carry.
    double* gw_in = grad.embedding.data() +
                    static_cast<std::int64_t>(cache.inputs[static_cast<std::size_t>(t)]) * d;
    for (std::int64_t k = 0; k < d; ++k) {
      gw_in[k] += dz[static_cast<std::size_t>(k)];
      carry_dh[static_cast<std::size_t>(k)] = dz[static_cast<std::size_t>(d + k)];
    }
  }
  return grad;
}

struct SgdBatchStats {
  double loss_token_sum = 0.0;   // sum over sentences of loss * target count
  std::int64_t target_tokens = 0;
};

// params - lr * mean over the batch of per-sentence gradients (each
// per-sentence gradient is already the mean over that sentence's
// targets). lr == 0 short-circuits so the input bits pass through.
inline ParamSet sgd_step(const ParamSet& params,
                         std::span<const Sentence> batch, double lr,
                         SgdBatchStats* stats = nullptr) {
  if (batch.empty()) throw std::invalid_argument("sgd_step: empty batch");
  if (lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");

  if (lr == 0.0 && !stats) return params;

  ParamGradient sum = ParamSet::zeros(params.config());
  for (const Sentence& s : batch) {
    auto [loss, cache] = forward_loss(params, s);
    if (stats) {
      stats->loss_token_sum += loss * static_cast<double>(cache.steps);
      stats->target_tokens += cache.steps;
    }
    if (lr == 0.0) continue;
    ParamGradient g = backward(params, cache);
    auto sum_t = sum.tensors();
    auto g_t = g.tensors();
    for (std::size_t i = 0; i < sum_t.size(); ++i)
      for (std::size_t k = 0; k < sum_t[i]->size(); ++k)
        (*sum_t[i])[k] += (*g_t[i])[k];
  }
  if (lr == 0.0) return params;

  const double scale = lr / static_cast<double>(batch.size());
  ParamSet next = params;
  auto next_t = next.tensors();
  auto sum_t = sum.tensors();
  for (std::size_t i = 0; i < next_t.size(); ++i)
    for (std::size_t k = 0; k < next_t[i]->size(); ++k)
      (*next_t[i])[k] -= scale * (*sum_t[i])[k];
  return next;
}

// Argmax with ties broken toward the lowest token id; NaN entries never
// displace an earlier value, so the result is deterministic for any
// input.
inline std::int32_t argmax_lowest_id(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t v = 1; v < logits.size(); ++v)
    if (logits[v] > logits[best]) best = v;
  return static_cast<std::int32_t>(best);
}

struct AccuracyCounts {
  std::int64_t correct = 0;
  std::int64_t total = 0;

  // Defined only when total > 0.
  double ratio() const {
    if (total <= 0) throw std::invalid_argument("accuracy ratio of empty eval");
    return static_cast<double>(correct) / static_cast<double>(total);
  }
};

// Next-word prediction accuracy: every target position (w1..wn, EOS)
// counts toward the denominator; a position is correct when the argmax
// of the logits equals the target.
inline AccuracyCounts accuracy(const ParamSet& p,
                               std::span<const Sentence> sentences) {
  AccuracyCounts acc;
  const std::int64_t d = p.embedding_dim, h = p.hidden_units, v = p.vocab_size;
  std::vector<double> z(static_cast<std::size_t>(2 * d));
  std::vector<double> gi(static_cast<std::size_t>(h));
  std::vector<double> gg(static_cast<std::size_t>(h));
  std::vector<double> go(static_cast<std::size_t>(h));
  std::vector<double> c_prev(static_cast<std::size_t>(h));
  std::vector<double> c_new(static_cast<std::size_t>(h));
  std::vector<double> h_prev(static_cast<std::size_t>(d));
  std::vector<double> h_new(static_cast<std::size_t>(d));
  std::vector<double> logits(static_cast<std::size_t>(v));

  for (const Sentence& s : sentences) {
    std::fill(c_prev.begin(), c_prev.end(), 0.0);
    std::fill(h_prev.begin(), h_prev.end(), 0.0);
    const std::int64_t steps = static_cast<std::int64_t>(s.size()) + 1;
    for (std::int64_t t = 0; t < steps; ++t) {
      const std::int32_t input = t == 0 ? kBosId : s[static_cast<std::size_t>(t - 1)];
      const std::int32_t target =
          t == steps - 1 ? kEosId : s[static_cast<std::size_t>(t)];
      detail::cifg_step(p, c_prev.data(), h_prev.data(), input, z.data(),
                        gi.data(), gg.data(), go.data(), c_new.data(),
                        h_new.data(), logits.data());
      if (argmax_lowest_id(logits) == target) ++acc.correct;
      ++acc.total;
      c_prev.swap(c_new);
      h_prev.swap(h_new);
    }
  }
  return acc;
}

}  // namespace fedpe
