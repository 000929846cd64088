/* Copyright 2026 The Podracer Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "podracer/common.hpp"
#include "podracer/params.hpp"
#include "podracer/rng.hpp"
#include "podracer/tensor.hpp"

namespace podracer {

/// Network: obs -> tanh hidden -> {policy logits, scalar value}.
struct MlpDims {
  std::size_t obs_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_actions = 0;

  std::size_t w1_numel() const { return obs_dim * hidden_dim; }
  std::size_t wpi_numel() const { return hidden_dim * num_actions; }
  std::size_t wv_numel() const { return hidden_dim; }

  // flat layout: W1, b1, Wpi, bpi, Wv, bv
  std::size_t b1_off() const { return w1_numel(); }
  std::size_t wpi_off() const { return b1_off() + hidden_dim; }
  std::size_t bpi_off() const { return wpi_off() + wpi_numel(); }
  std::size_t wv_off() const { return bpi_off() + num_actions; }
  std::size_t bv_off() const { return wv_off() + wv_numel(); }
  std::size_t param_count() const { return bv_off() + 1; }

  friend bool operator==(const MlpDims&, const MlpDims&) = default;
};

template <typename S>
struct MlpView {
  const S* w1;   // [obs, hidden]
  const S* b1;   // [hidden]
  const S* wpi;  // [hidden, actions]
  const S* bpi;  // [actions]
  const S* wv;   // [hidden]
  const S* bv;   // [1]
  MlpDims dims;
};

template <typename S>
MlpView<S> mlp_view(std::span<const S> flat, const MlpDims& d) {
  if (flat.size() != d.param_count())
    throw ConfigError("flat parameter vector has wrong length for MLP dims");
  return MlpView<S>{flat.data(),
                    flat.data() + d.b1_off(),
                    flat.data() + d.wpi_off(),
                    flat.data() + d.bpi_off(),
                    flat.data() + d.wv_off(),
                    flat.data() + d.bv_off(),
                    d};
}

inline Params mlp_init(RngKey key, std::size_t obs_dim, std::size_t hidden_dim,
                       std::size_t num_actions) {
  if (obs_dim == 0 || hidden_dim == 0 || num_actions == 0)
    throw ConfigError("mlp_init: all dimensions must be positive");
  const float r1 = std::sqrt(6.0f / static_cast<float>(obs_dim + hidden_dim));
  const float rpi = std::sqrt(6.0f / static_cast<float>(hidden_dim + num_actions));
  const float rv = std::sqrt(6.0f / static_cast<float>(hidden_dim + 1));
  Params p;
  p.tensors.push_back(
      {"W1", Tensor::uniform({obs_dim, hidden_dim}, fold_in(key, 1), r1)});
  p.tensors.push_back({"b1", Tensor::zeros({hidden_dim})});
  p.tensors.push_back(
      {"Wpi", Tensor::uniform({hidden_dim, num_actions}, fold_in(key, 2), rpi)});
  p.tensors.push_back({"bpi", Tensor::zeros({num_actions})});
  p.tensors.push_back({"Wv", Tensor::uniform({hidden_dim, 1}, fold_in(key, 3), rv)});
  p.tensors.push_back({"bv", Tensor::zeros({1})});
  return p;
}

inline MlpDims mlp_dims_of(const Params& p) {
  const auto& w1 = p.at("W1");
  const auto& wpi = p.at("Wpi");
  return MlpDims{w1.shape.at(0), w1.shape.at(1), wpi.shape.at(1)};
}

inline Params flat_to_params(std::span<const float> flat, const MlpDims& d) {
  Params p = mlp_init(make_key(0), d.obs_dim, d.hidden_dim, d.num_actions);
  p.unflatten(flat);
  return p;
}

/// Forward pass for one observation row. hidden/logits/value are outputs;
/// hidden may be null when the caller does not need activations. A row's
/// result never depends on the rest of the batch.
template <typename S>
void mlp_forward_row(const MlpView<S>& m, const S* obs, S* hidden, S* logits,
                     S* value) {
  const std::size_t O = m.dims.obs_dim, H = m.dims.hidden_dim,
                    A = m.dims.num_actions;
  std::vector<S> local;
  S* h = hidden;
  if (h == nullptr) {
    local.resize(H);
    h = local.data();
  }
  for (std::size_t j = 0; j < H; ++j) {
    S acc = m.b1[j];
    for (std::size_t i = 0; i < O; ++i) acc += obs[i] * m.w1[i * H + j];
    h[j] = std::tanh(acc);
  }
  for (std::size_t a = 0; a < A; ++a) {
    S acc = m.bpi[a];
    for (std::size_t j = 0; j < H; ++j) acc += h[j] * m.wpi[j * A + a];
    logits[a] = acc;
  }
  S acc = m.bv[0];
  for (std::size_t j = 0; j < H; ++j) acc += h[j] * m.wv[j];
  *value = acc;
}

/// Stable log-softmax (max subtraction). Returns log Z - max.
template <typename S>
void log_softmax_row(const S* logits, std::size_t n, S* log_probs) {
  S mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  S sum = S(0);
  for (std::size_t i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  const S log_z = std::log(sum);
  for (std::size_t i = 0; i < n; ++i) log_probs[i] = logits[i] - mx - log_z;
}

/// Inverse-CDF categorical draw from one uniform sample.
inline std::uint32_t sample_categorical(std::span<const float> log_probs,
                                        float u) {
  float cum = 0.0f;
  for (std::size_t i = 0; i + 1 < log_probs.size(); ++i) {
    cum += std::exp(log_probs[i]);
    if (u < cum) return static_cast<std::uint32_t>(i);
  }
  return static_cast<std::uint32_t>(log_probs.size() - 1);
}

/// Batched forward. obs_batch is [B, obs_dim]; outputs [B, A] and [B].
inline void forward(const Params& params, const Tensor& obs_batch,
                    Tensor& logits, Tensor& values) {
  const MlpDims d = mlp_dims_of(params);
  if (obs_batch.shape.size() != 2 || obs_batch.shape[1] != d.obs_dim)
    throw ConfigError("forward: observation batch must be [B, obs_dim]");
  const std::size_t B = obs_batch.shape[0];
  const std::vector<float> flat = params.flatten();
  const auto m = mlp_view<float>(flat, d);
  logits = Tensor({B, d.num_actions});
  values = Tensor({B});
  for (std::size_t b = 0; b < B; ++b) {
    mlp_forward_row<float>(m, obs_batch.data.data() + b * d.obs_dim, nullptr,
                           logits.data.data() + b * d.num_actions,
                           values.data.data() + b);
  }
#ifndef NDEBUG
  if (!all_finite(logits.data) || !all_finite(values.data))
    throw MeshError("forward produced non-finite outputs");
#endif
}

/// One update's worth of items with precomputed advantages and value
/// targets, time-major [T, B, ...]. The importance-weighted estimator that
/// fills advantages/value_targets lives with the agent; at this level they
/// are plain inputs, which is what keeps the analytic gradient an exact
/// gradient of this loss.
struct LossBatchView {
  std::size_t unroll_len = 0;  // T
  std::size_t batch = 0;       // B
  std::span<const float> observations;    // [T*B*obs_dim]
  std::span<const std::uint32_t> actions; // [T*B]
  std::span<const float> advantages;      // [T*B]
  std::span<const float> value_targets;   // [T*B]
};

struct LossMetrics {
  float total = 0.0f;
  float policy = 0.0f;
  float value = 0.0f;
  float entropy = 0.0f;  // mean policy entropy (not scaled by the cost)
};

struct LossCosts {
  float value_cost = 0.5f;
  float entropy_cost = 0.01f;
};

namespace detail {

// Per-item loss in scalar type S. log_probs/hidden are scratch of size A/H.
template <typename S>
S item_loss(const MlpView<S>& m, const S* obs, std::uint32_t action, S adv,
            S target, const LossCosts& costs, S* hidden, S* logits,
            S* log_probs) {
  S value;
  mlp_forward_row<S>(m, obs, hidden, logits, &value);
  log_softmax_row<S>(logits, m.dims.num_actions, log_probs);
  S entropy = S(0);
  for (std::size_t a = 0; a < m.dims.num_actions; ++a)
    entropy -= std::exp(log_probs[a]) * log_probs[a];
  const S verr = value - target;
  return -adv * log_probs[action] + S(costs.value_cost) * S(0.5) * verr * verr -
         S(costs.entropy_cost) * entropy;
}

}  // namespace detail

/// Loss evaluated in scalar type S (double instantiation backs the
/// finite-difference oracle; the production path is f32). Mean over T*B
/// items, reduced over the batch dimension with the fixed tree.
template <typename S>
S loss_only(std::span<const S> params_flat, const MlpDims& dims,
            const LossBatchView& batch, const LossCosts& costs) {
  const auto m = mlp_view<S>(params_flat, dims);
  const std::size_t T = batch.unroll_len, B = batch.batch, O = dims.obs_dim;
  std::vector<S> hidden(dims.hidden_dim), logits(dims.num_actions),
      log_probs(dims.num_actions), obs(O);
  const auto slot_loss = [&](std::size_t b) {
    S acc = S(0);
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t item = t * B + b;
      for (std::size_t i = 0; i < O; ++i)
        obs[i] = S(batch.observations[item * O + i]);
      acc += detail::item_loss<S>(m, obs.data(), batch.actions[item],
                                  S(batch.advantages[item]),
                                  S(batch.value_targets[item]), costs,
                                  hidden.data(), logits.data(), log_probs.data());
    }
    return acc;
  };
  const S sum = tree_reduce<S>(0, B, slot_loss, [](S a, S b) { return a + b; });
  return sum * (S(1) / S(static_cast<double>(T * B)));
}

/// Forward activations for every item of a shard, as produced while acting
/// or recomputed by the learner.
struct ActivationView {
  std::span<const float> hidden;  // [T*B*hidden_dim], post-tanh
  std::span<const float> logits;  // [T*B*num_actions]
  std::span<const float> values;  // [T*B]
};

/// Backward pass from stored activations. Mean loss and mean gradients
/// over the batch: gradients are accumulated per batch slot (sequentially
/// over time) and combined across slots with the fixed reduction tree,
/// then scaled once by 1/(T*B); this is the order contract behind the
/// replica-vs-batch bitwise equivalences.
inline LossMetrics loss_and_grads_precomputed(std::span<const float> params_flat,
                                              const MlpDims& dims,
                                              const LossBatchView& batch,
                                              const LossCosts& costs,
                                              const ActivationView& acts,
                                              std::span<float> grads_out) {
  const std::size_t T = batch.unroll_len, B = batch.batch;
  const std::size_t O = dims.obs_dim, H = dims.hidden_dim, A = dims.num_actions;
  const std::size_t P = dims.param_count();
  if (grads_out.size() != P)
    throw ConfigError("loss_and_grads: gradient output has wrong length");
  if (batch.observations.size() != T * B * O || batch.actions.size() != T * B ||
      batch.advantages.size() != T * B || batch.value_targets.size() != T * B)
    throw ConfigError("loss_and_grads: inconsistent shard shapes");
  if (acts.hidden.size() != T * B * H || acts.logits.size() != T * B * A ||
      acts.values.size() != T * B)
    throw ConfigError("loss_and_grads: inconsistent activation shapes");
  if (!all_finite(batch.observations) || !all_finite(batch.advantages) ||
      !all_finite(batch.value_targets))
    throw ConfigError("loss_and_grads: non-finite values in shard");

  const auto m = mlp_view<float>(params_flat, dims);

  // Per-slot accumulators: gradient sum plus {loss, pg, value, entropy}.
  std::vector<float> slot_grads(B * P, 0.0f);
  std::vector<float> slot_stats(B * 4, 0.0f);

  std::vector<float> log_probs(A), dlogits(A), dpre(H);
  for (std::size_t b = 0; b < B; ++b) {
    float* g = slot_grads.data() + b * P;
    float* stats = slot_stats.data() + b * 4;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t item = t * B + b;
      const float* obs = batch.observations.data() + item * O;
      const std::uint32_t action = batch.actions[item];
      if (action >= A) throw ConfigError("loss_and_grads: action out of range");
      const float adv = batch.advantages[item];
      const float target = batch.value_targets[item];

      const float* hidden = acts.hidden.data() + item * H;
      const float* logits = acts.logits.data() + item * A;
      const float value = acts.values[item];
      log_softmax_row<float>(logits, A, log_probs.data());

      float entropy = 0.0f;
      for (std::size_t a = 0; a < A; ++a)
        entropy -= std::exp(log_probs[a]) * log_probs[a];
      const float verr = value - target;
      const float pg_loss = -adv * log_probs[action];
      const float v_loss = costs.value_cost * 0.5f * verr * verr;

      stats[0] += pg_loss + v_loss - costs.entropy_cost * entropy;
      stats[1] += pg_loss;
      stats[2] += v_loss;
      stats[3] += entropy;

      // d loss / d logits
      for (std::size_t a = 0; a < A; ++a) {
        const float p = std::exp(log_probs[a]);
        const float pg_term = -adv * ((a == action ? 1.0f : 0.0f) - p);
        const float ent_term = costs.entropy_cost * p * (log_probs[a] + entropy);
        dlogits[a] = pg_term + ent_term;
      }
      const float dvalue = costs.value_cost * verr;

      // heads
      for (std::size_t j = 0; j < H; ++j) {
        float dh = dvalue * m.wv[j];
        for (std::size_t a = 0; a < A; ++a) dh += dlogits[a] * m.wpi[j * A + a];
        dpre[j] = dh * (1.0f - hidden[j] * hidden[j]);
        g[dims.wv_off() + j] += hidden[j] * dvalue;
        for (std::size_t a = 0; a < A; ++a)
          g[dims.wpi_off() + j * A + a] += hidden[j] * dlogits[a];
      }
      g[dims.bv_off()] += dvalue;
      for (std::size_t a = 0; a < A; ++a) g[dims.bpi_off() + a] += dlogits[a];

      // trunk
      for (std::size_t i = 0; i < O; ++i) {
        const float oi = obs[i];
        if (oi == 0.0f) continue;  // observations are sparse one-hots
        float* row = g + i * H;
        for (std::size_t j = 0; j < H; ++j) row[j] += oi * dpre[j];
      }
      for (std::size_t j = 0; j < H; ++j) g[dims.b1_off() + j] += dpre[j];
    }
  }

  // Tree-combine slots, then scale once.
  struct Acc {
    std::span<float> grads;
    float* stats;
  };
  const auto combined = tree_reduce<Acc>(
      0, B,
      [&](std::size_t b) {
        return Acc{std::span<float>(slot_grads.data() + b * P, P),
                   slot_stats.data() + b * 4};
      },
      [&](Acc a, Acc c) {
        for (std::size_t i = 0; i < P; ++i) a.grads[i] += c.grads[i];
        for (int i = 0; i < 4; ++i) a.stats[i] += c.stats[i];
        return a;
      });

  const float scale = 1.0f / static_cast<float>(T * B);
  for (std::size_t i = 0; i < P; ++i) grads_out[i] = combined.grads[i] * scale;

  LossMetrics metrics;
  metrics.total = combined.stats[0] * scale;
  metrics.policy = combined.stats[1] * scale;
  metrics.value = combined.stats[2] * scale;
  metrics.entropy = combined.stats[3] * scale;
#ifndef NDEBUG
  if (!all_finite(grads_out) || !std::isfinite(metrics.total))
    throw MeshError("loss_and_grads produced non-finite values");
#endif
  return metrics;
}

/// Recomputing variant: runs the forward pass for every item, then the
/// backward pass above. The learner side uses this (it never sees the
/// actor's activations); the fused runtime keeps its acting activations
/// and calls loss_and_grads_precomputed directly.
inline LossMetrics loss_and_grads_flat(std::span<const float> params_flat,
                                       const MlpDims& dims,
                                       const LossBatchView& batch,
                                       const LossCosts& costs,
                                       std::span<float> grads_out) {
  const std::size_t n = batch.unroll_len * batch.batch;
  if (batch.observations.size() != n * dims.obs_dim)
    throw ConfigError("loss_and_grads: inconsistent shard shapes");
  std::vector<float> hidden(n * dims.hidden_dim);
  std::vector<float> logits(n * dims.num_actions);
  std::vector<float> values(n);
  const auto m = mlp_view<float>(params_flat, dims);
  for (std::size_t i = 0; i < n; ++i)
    mlp_forward_row<float>(m, batch.observations.data() + i * dims.obs_dim,
                           hidden.data() + i * dims.hidden_dim,
                           logits.data() + i * dims.num_actions, &values[i]);
  return loss_and_grads_precomputed(params_flat, dims, batch, costs,
                                    ActivationView{hidden, logits, values},
                                    grads_out);
}

/// Params-level wrapper over loss_and_grads_flat.
inline LossMetrics loss_and_grads(const Params& params,
                                  const LossBatchView& batch,
                                  const LossCosts& costs, Grads& grads_out) {
  const MlpDims d = mlp_dims_of(params);
  const std::vector<float> flat = params.flatten();
  std::vector<float> gflat(d.param_count());
  const LossMetrics m = loss_and_grads_flat(flat, d, batch, costs, gflat);
  grads_out = params.zeros_like();
  grads_out.unflatten(gflat);
  return m;
}

/// params' = params - lr * (momentum * velocity + grads); plain SGD when
/// momentum is zero.
inline void sgd_update_flat(std::span<float> params_flat,
                            std::span<const float> grads_flat,
                            std::span<float> velocity_flat, float lr,
                            float momentum) {
  if (params_flat.size() != grads_flat.size() ||
      params_flat.size() != velocity_flat.size())
    throw ConfigError("sgd_update: mismatched parameter/gradient lengths");
  for (std::size_t i = 0; i < params_flat.size(); ++i) {
    velocity_flat[i] = momentum * velocity_flat[i] + grads_flat[i];
    params_flat[i] -= lr * velocity_flat[i];
  }
}

inline void sgd_update(Params& params, const Grads& grads, OptimizerState& opt,
                       float lr, float momentum = 0.0f) {
  if (!params.same_structure(grads))
    throw ConfigError("sgd_update: gradient structure does not match params");
  if (!params.same_structure(opt.velocity))
    throw ConfigError("sgd_update: optimizer state does not match params");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    auto& p = params.tensors[i].value.data;
    const auto& g = grads.tensors[i].value.data;
    auto& v = opt.velocity.tensors[i].value.data;
    sgd_update_flat(p, g, v, lr, momentum);
  }
  opt.step_count += 1;
}

// --- finite-difference gradient checker --------------------------------

struct FiniteDiffEntry {
  std::string name;
  std::size_t index = 0;       // worst element within the tensor
  float analytic = 0.0f;
  double numeric = 0.0;
  float rel_err = 0.0f;
};

struct FiniteDiffReport {
  float max_rel_err = 0.0f;
  float tolerance = 0.0f;
  bool passed = false;
  std::vector<FiniteDiffEntry> per_tensor;  // worst entry per tensor
};

/// Central-difference check of analytic gradients. loss_fn is evaluated in
/// double so the difference quotient stays above f32 rounding noise; the
/// analytic gradients come from the f32 production path. Relative error
/// uses max(|analytic|, |numeric|, abs_guard) as denominator so that
/// near-zero components are judged by absolute agreement.
inline FiniteDiffReport finite_diff_check(
    const Params& params, const Grads& analytic,
    const std::function<double(std::span<const double>)>& loss_fn,
    double epsilon, float tolerance, float abs_guard = 1e-2f) {
  if (epsilon <= 0.0) throw ConfigError("finite_diff_check: epsilon must be > 0");
  if (!params.same_structure(analytic))
    throw ConfigError("finite_diff_check: gradient structure mismatch");

  const std::vector<float> flat32 = params.flatten();
  std::vector<double> flat(flat32.begin(), flat32.end());

  FiniteDiffReport report;
  report.tolerance = tolerance;

  std::size_t off = 0;
  for (const auto& t : analytic.tensors) {
    FiniteDiffEntry worst;
    worst.name = t.name;
    for (std::size_t i = 0; i < t.value.numel(); ++i) {
      const std::size_t k = off + i;
      const double saved = flat[k];
      flat[k] = saved + epsilon;
      const double up = loss_fn(flat);
      flat[k] = saved - epsilon;
      const double down = loss_fn(flat);
      flat[k] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const float a = t.value.data[i];
      const float denom = std::max(
          {std::abs(a), static_cast<float>(std::abs(numeric)), abs_guard});
      const float rel = static_cast<float>(std::abs(a - numeric)) / denom;
      if (rel >= worst.rel_err) {
        worst.index = i;
        worst.analytic = a;
        worst.numeric = numeric;
        worst.rel_err = rel;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, worst.rel_err);
    report.per_tensor.push_back(std::move(worst));
    off += t.value.numel();
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

}  // namespace podracer
