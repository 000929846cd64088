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
#include <span>
#include <vector>

#include "podracer/common.hpp"
#include "podracer/network.hpp"
#include "podracer/params.hpp"
#include "podracer/rng.hpp"
#include "podracer/tensor.hpp"
#include "podracer/trajectory.hpp"

namespace podracer {

struct AgentConfig {
  float discount = 0.99f;       // gamma
  float entropy_cost = 0.01f;
  float value_cost = 0.5f;
  float rho_clip = 1.0f;        // importance-ratio cap
  float learning_rate = 3e-4f;
  float momentum = 0.0f;
  std::size_t hidden_dim = 64;

  void validate() const {
    if (discount < 0.0f || discount > 1.0f)
      throw ConfigError("agent.discount must be in [0, 1]");
    if (entropy_cost < 0.0f) throw ConfigError("agent.entropy_cost must be >= 0");
    if (value_cost < 0.0f) throw ConfigError("agent.value_cost must be >= 0");
    if (rho_clip < 1.0f) throw ConfigError("agent.rho_clip must be >= 1");
    if (learning_rate <= 0.0f) throw ConfigError("agent.learning_rate must be > 0");
    if (momentum < 0.0f || momentum >= 1.0f)
      throw ConfigError("agent.momentum must be in [0, 1)");
    if (hidden_dim == 0) throw ConfigError("agent.hidden_dim must be positive");
  }

  LossCosts loss_costs() const { return LossCosts{value_cost, entropy_cost}; }
};

/// Samples one action per row from softmax(logits). Row i uses the subkey
/// derived from (key, slot_offset + i), so the draw for a given slot does
/// not depend on how the batch is carved up across cores. When hidden_out
/// and values_out are non-empty the forward activations are stored there
/// for reuse by the update computation.
inline void select_actions_rows(const MlpView<float>& m,
                                std::span<const float> obs_rows, std::size_t batch,
                                RngKey key, std::uint64_t slot_offset,
                                std::span<std::uint32_t> actions_out,
                                std::span<float> logits_out,
                                std::span<float> hidden_out = {},
                                std::span<float> values_out = {}) {
  const std::size_t O = m.dims.obs_dim, H = m.dims.hidden_dim,
                    A = m.dims.num_actions;
  std::vector<float> log_probs(A);
  for (std::size_t i = 0; i < batch; ++i) {
    float value;
    float* hidden = hidden_out.empty() ? nullptr : hidden_out.data() + i * H;
    float* logits = logits_out.data() + i * A;
    mlp_forward_row<float>(m, obs_rows.data() + i * O, hidden, logits, &value);
    if (!values_out.empty()) values_out[i] = value;
    log_softmax_row<float>(logits, A, log_probs.data());
    const float u = random_unit_float(fold_in(key, slot_offset + i));
    actions_out[i] = sample_categorical(log_probs, u);
  }
}

/// Backward recursion for the bootstrapped discounted targets, one slot at
/// a time: target_t = r_t + gamma * (1 - done_t) * target_{t+1}, seeded
/// with that slot's bootstrap value.
inline void bootstrapped_targets(std::span<const float> rewards,
                                 std::span<const std::uint8_t> dones,
                                 std::span<const float> boot_values, std::size_t T,
                                 std::size_t B, float gamma,
                                 std::span<float> targets_out) {
  for (std::size_t b = 0; b < B; ++b) {
    float target_next = boot_values[b];
    for (std::size_t t = T; t-- > 0;) {
      const std::size_t item = t * B + b;
      const float not_done = dones[item] ? 0.0f : 1.0f;
      target_next = rewards[item] + gamma * not_done * target_next;
      targets_out[item] = target_next;
    }
  }
}

/// Batched action selection: actions[B] plus the behavior logits recorded
/// for later off-policy correction. Deterministic in (params, obs, key).
inline std::pair<std::vector<std::uint32_t>, Tensor> select_actions(
    const Params& params, const Tensor& obs_batch, RngKey key) {
  const MlpDims d = mlp_dims_of(params);
  if (obs_batch.shape.size() != 2 || obs_batch.shape[1] != d.obs_dim)
    throw ConfigError("select_actions: observation batch must be [B, obs_dim]");
  const std::size_t B = obs_batch.shape[0];
  const std::vector<float> flat = params.flatten();
  const auto m = mlp_view<float>(flat, d);
  std::vector<std::uint32_t> actions(B);
  Tensor logits({B, d.num_actions});
  select_actions_rows(m, obs_batch.data, B, key, 0, actions, logits.data);
  return {std::move(actions), std::move(logits)};
}

struct TargetStats {
  float mean_abs_rho = 0.0f;
  float max_rho = 0.0f;
};

/// Importance-weighted one-step-corrected targets.
///
/// Per item: rho_t = min(rho_clip, pi_current(a_t) / pi_behavior(a_t)).
/// Targets run backward through each slot's T steps,
///   target_t = r_t + gamma * (1 - done_t) * target_{t+1},
/// bootstrapped from V(bootstrap_observation); a done flag cuts the
/// bootstrap at the episode boundary. advantages_t = rho_t * (target_t -
/// V(x_t)). Everything here is data for the loss: gradients do not flow
/// through targets or ratios.
inline TargetStats compute_update_targets_flat(
    std::span<const float> params_flat, const MlpDims& dims, const Trajectory& traj,
    const AgentConfig& config, std::span<float> value_targets_out,
    std::span<float> advantages_out) {
  traj.validate();
  const std::size_t T = traj.unroll_len, B = traj.batch, A = dims.num_actions;
  if (value_targets_out.size() != T * B || advantages_out.size() != T * B)
    throw ConfigError("compute_update_targets: bad output sizes");
  const auto m = mlp_view<float>(params_flat, dims);

  std::vector<float> values(T * B);
  std::vector<float> boot_values(B);
  std::vector<float> rho(T * B);
  std::vector<float> logits(A), cur_lp(A), beh_lp(A);

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t item = t * B + b;
      mlp_forward_row<float>(m, traj.observations.data() + item * dims.obs_dim,
                             nullptr, logits.data(), &values[item]);
      log_softmax_row<float>(logits.data(), A, cur_lp.data());
      log_softmax_row<float>(traj.behavior_logits.data() + item * A, A,
                             beh_lp.data());
      const std::uint32_t a = traj.actions[item];
      if (a >= A) throw ConfigError("compute_update_targets: action out of range");
      const float ratio = std::exp(cur_lp[a] - beh_lp[a]);
      rho[item] = std::min(config.rho_clip, ratio);
    }
    mlp_forward_row<float>(m, traj.bootstrap_observation.data() + b * dims.obs_dim,
                           nullptr, logits.data(), &boot_values[b]);
  }

  bootstrapped_targets(traj.rewards, traj.dones, boot_values, T, B,
                       config.discount, value_targets_out);
  for (std::size_t item = 0; item < T * B; ++item)
    advantages_out[item] = rho[item] * (value_targets_out[item] - values[item]);

  TargetStats stats;
  float abs_sum = 0.0f;
  for (float r : rho) {
    abs_sum += std::abs(r);
    stats.max_rho = std::max(stats.max_rho, r);
  }
  stats.mean_abs_rho = abs_sum / static_cast<float>(T * B);
  return stats;
}

inline TargetStats compute_update_targets(const Trajectory& traj,
                                          const Params& params,
                                          const AgentConfig& config,
                                          std::vector<float>& value_targets,
                                          std::vector<float>& advantages) {
  const MlpDims d = mlp_dims_of(params);
  const std::vector<float> flat = params.flatten();
  value_targets.assign(traj.unroll_len * traj.batch, 0.0f);
  advantages.assign(traj.unroll_len * traj.batch, 0.0f);
  return compute_update_targets_flat(flat, d, traj, config, value_targets,
                                     advantages);
}

struct UpdateMetrics {
  LossMetrics loss;
  TargetStats targets;
};

/// One full update: targets -> loss/gradients -> SGD step.
inline UpdateMetrics agent_update(Params& params, OptimizerState& opt,
                                  const Trajectory& traj, const AgentConfig& config) {
  std::vector<float> value_targets, advantages;
  UpdateMetrics metrics;
  metrics.targets = compute_update_targets(traj, params, config, value_targets,
                                           advantages);
  LossBatchView batch;
  batch.unroll_len = traj.unroll_len;
  batch.batch = traj.batch;
  batch.observations = traj.observations;
  batch.actions = traj.actions;
  batch.advantages = advantages;
  batch.value_targets = value_targets;
  Grads grads;
  metrics.loss = loss_and_grads(params, batch, config.loss_costs(), grads);
  sgd_update(params, grads, opt, config.learning_rate, config.momentum);
  return metrics;
}

}  // namespace podracer
