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

#include <bit>
#include <chrono>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "podracer/agent.hpp"
#include "podracer/common.hpp"
#include "podracer/env_catch.hpp"
#include "podracer/mesh.hpp"
#include "podracer/network.hpp"
#include "podracer/rng.hpp"

namespace podracer {

/// Fused online runtime: environment stepping, action selection and the
/// parameter update run as one program per core, vectorized over a per-core
/// batch and replicated across a core group with a gradient all-reduce as
/// the only cross-core coupling.
struct AnakinConfig {
  std::size_t num_cores = 1;
  std::size_t batch_per_core = 32;
  std::size_t unroll_length = 16;  // T
  std::uint64_t total_steps = 0;   // env steps across all cores
  std::uint64_t seed = 0;
  std::size_t log_interval = 100;  // updates per metrics fetch

  std::uint64_t steps_per_update() const {
    return static_cast<std::uint64_t>(num_cores) * batch_per_core * unroll_length;
  }

  std::uint64_t num_updates() const {
    const std::uint64_t per = steps_per_update();
    return (total_steps + per - 1) / per;
  }

  void validate(std::size_t mesh_cores) const {
    if (num_cores == 0 || batch_per_core == 0 || unroll_length == 0)
      throw ConfigError("anakin: num_cores, batch_per_core and unroll_length must be positive");
    if (total_steps == 0) throw ConfigError("anakin: total_steps must be positive");
    if (log_interval == 0) throw ConfigError("anakin: log_interval must be positive");
    if (num_cores > mesh_cores)
      throw ConfigError("anakin: config wants " + std::to_string(num_cores) +
                        " cores but the mesh has " + std::to_string(mesh_cores));
  }
};

struct AnakinLogRow {
  std::uint64_t update = 0;
  std::uint64_t env_steps = 0;
  double mean_return = 0.0;
  double loss = 0.0;
  double steps_per_sec = 0.0;
};

struct AnakinResult {
  Params final_params;
  std::vector<AnakinLogRow> log;
  double wall_seconds = 0.0;
  double steps_per_sec = 0.0;         // whole run
  double steps_per_sec_steady = 0.0;  // excluding the first updates (warmup)
  std::uint64_t env_steps = 0;
  std::uint64_t updates = 0;
  std::uint64_t h2d_bytes_after_init = 0;
  std::uint64_t h2d_bytes_final = 0;
  bool replicas_in_sync = true;
  /// one flat-params snapshot per update when capture_params is set
  std::vector<std::vector<float>> param_history;
};

struct AnakinOptions {
  bool capture_params = false;      // snapshot core-0 params every update
  std::size_t sync_check_interval = 16;  // compare per-core hashes every K updates
};

namespace detail {

// env-state slot layout: 7 packed state words + the running episode return
// (f32 bits), kept on device between updates.
inline constexpr std::size_t kAnakinSlotWords = kCatchStateWords + 1;

// metrics accumulator slots
enum AnakinMetric : std::size_t {
  kMetEpisodes = 0,
  kMetReturnSum = 1,
  kMetLossSum = 2,
  kMetEntropySum = 3,
  kMetRhoSum = 4,
  kMetUpdates = 5,
  kAnakinMetricCount = 6,
};

}  // namespace detail

/// One core's fused step-and-update unit, pure and span-based so the same
/// code runs inside device programs and in host-side oracles. Steps the
/// per-core batch T times (reusing the acting forward pass's activations in
/// the backward pass), then writes the local mean gradients to grads_out.
/// env_state is carried forward in place.
inline LossMetrics anakin_unit(std::span<const float> params,
                               const MlpDims& dims, std::span<std::uint32_t> env_state,
                               RngKey act_master, std::uint64_t update_index,
                               std::uint64_t slot_offset, const AnakinConfig& cfg,
                               const AgentConfig& agent,
                               std::span<float> grads_out,
                               std::span<float> metrics /* kAnakinMetricCount */) {
  const std::size_t T = cfg.unroll_length, B = cfg.batch_per_core;
  const std::size_t O = dims.obs_dim, A = dims.num_actions;
  if (env_state.size() != B * detail::kAnakinSlotWords)
    throw ConfigError("anakin_unit: env state buffer has wrong size");

  Trajectory traj = Trajectory::make(T, B, O, A);
  const auto m = mlp_view<float>(params, dims);
  const std::size_t H = dims.hidden_dim;

  // Acting activations, kept for the backward pass instead of a second
  // forward sweep.
  std::vector<float> hidden(T * B * H);
  std::vector<float> values(T * B);

  for (std::size_t t = 0; t < T; ++t) {
    float* obs_rows = traj.observations.data() + t * B * O;
    for (std::size_t b = 0; b < B; ++b) {
      const CatchState s =
          catch_state_unpack(env_state.data() + b * detail::kAnakinSlotWords);
      catch_observe_into(s, {obs_rows + b * O, O});
    }
    const RngKey step_key = fold_in(act_master, update_index * T + t);
    select_actions_rows(m, {obs_rows, B * O}, B, step_key, slot_offset,
                        {traj.actions.data() + t * B, B},
                        {traj.behavior_logits.data() + t * B * A, B * A},
                        {hidden.data() + t * B * H, B * H},
                        {values.data() + t * B, B});
    for (std::size_t b = 0; b < B; ++b) {
      std::uint32_t* slot = env_state.data() + b * detail::kAnakinSlotWords;
      CatchState s = catch_state_unpack(slot);
      CatchTimeStep ts;
      s = catch_step(s, traj.actions[t * B + b], ts);
      catch_state_pack(s, slot);
      traj.rewards[t * B + b] = ts.reward;
      traj.dones[t * B + b] = ts.done ? 1 : 0;

      float run_return = std::bit_cast<float>(slot[kCatchStateWords]);
      run_return += ts.reward;
      if (ts.done) {
        metrics[detail::kMetEpisodes] += 1.0f;
        metrics[detail::kMetReturnSum] += run_return;
        run_return = 0.0f;
      }
      slot[kCatchStateWords] = std::bit_cast<std::uint32_t>(run_return);
    }
  }
  std::vector<float> boot_values(B);
  {
    std::vector<float> boot_logits(A);
    for (std::size_t b = 0; b < B; ++b) {
      const CatchState s =
          catch_state_unpack(env_state.data() + b * detail::kAnakinSlotWords);
      catch_observe_into(s, {traj.bootstrap_observation.data() + b * O, O});
      mlp_forward_row<float>(m, traj.bootstrap_observation.data() + b * O, nullptr,
                             boot_logits.data(), &boot_values[b]);
    }
  }

  // Behavior and target policies coincide inside the fused unit, so the
  // clipped importance ratio is exactly one.
  std::vector<float> value_targets(T * B), advantages(T * B);
  bootstrapped_targets(traj.rewards, traj.dones, boot_values, T, B,
                       agent.discount, value_targets);
  for (std::size_t item = 0; item < T * B; ++item)
    advantages[item] = 1.0f * (value_targets[item] - values[item]);

  LossBatchView batch;
  batch.unroll_len = T;
  batch.batch = B;
  batch.observations = traj.observations;
  batch.actions = traj.actions;
  batch.advantages = advantages;
  batch.value_targets = value_targets;
  const LossMetrics loss = loss_and_grads_precomputed(
      params, dims, batch, agent.loss_costs(),
      ActivationView{hidden, traj.behavior_logits, values}, grads_out);

  metrics[detail::kMetLossSum] += loss.total;
  metrics[detail::kMetEntropySum] += loss.entropy;
  metrics[detail::kMetRhoSum] += 1.0f;
  metrics[detail::kMetUpdates] += 1.0f;
  return loss;
}

/// Replicated training. Initialization puts identical params on every
/// core; afterwards the training loop's data plane never touches the host:
/// gradients are averaged with an in-program all-reduce and every core
/// applies the same update to its resident copy. Metrics leave the device
/// only every log_interval updates.
inline AnakinResult anakin_train(Mesh& mesh, const AnakinConfig& cfg,
                                 const AgentConfig& agent,
                                 const AnakinOptions& options = {}) {
  cfg.validate(mesh.num_cores());
  agent.validate();

  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  const std::size_t P = dims.param_count();
  const std::size_t B = cfg.batch_per_core;
  const RngKey master = make_key(cfg.seed);
  const RngKey init_key = fold_in(master, 0);
  const RngKey env_master = fold_in(master, 1);
  const RngKey act_master = fold_in(master, 2);

  const Params init = mlp_init(init_key, dims.obs_dim, dims.hidden_dim, dims.num_actions);
  const std::vector<float> init_flat = init.flatten();
  const CoreGroup group = CoreGroup::range(0, cfg.num_cores);

  struct CoreState {
    DeviceBuffer params, velocity, env_state, metrics;
  };
  std::vector<CoreState> cores(cfg.num_cores);
  for (std::size_t c = 0; c < cfg.num_cores; ++c) {
    const CoreId id{c};
    cores[c].params = mesh.put(id, init_flat, {P});
    cores[c].velocity = mesh.put(id, std::vector<float>(P, 0.0f), {P});
    std::vector<std::uint32_t> slots(B * detail::kAnakinSlotWords, 0);
    for (std::size_t b = 0; b < B; ++b) {
      const std::uint64_t g = c * B + b;
      const CatchState s = catch_initial_state(fold_in(env_master, g));
      catch_state_pack(s, slots.data() + b * detail::kAnakinSlotWords);
      slots[b * detail::kAnakinSlotWords + kCatchStateWords] =
          std::bit_cast<std::uint32_t>(0.0f);
    }
    cores[c].env_state = mesh.put_u32(id, slots, {B, detail::kAnakinSlotWords});
    cores[c].metrics = mesh.put(
        id, std::vector<float>(detail::kAnakinMetricCount, 0.0f),
        {detail::kAnakinMetricCount});
  }

  AnakinResult result;
  result.h2d_bytes_after_init = mesh.total_h2d_bytes();
  result.updates = cfg.num_updates();

  const auto t_start = std::chrono::steady_clock::now();
  auto t_window = t_start;
  auto t_steady = t_start;
  const std::uint64_t warmup_updates = std::min<std::uint64_t>(2, result.updates / 4);

  for (std::uint64_t u = 0; u < result.updates; ++u) {
    const bool log_now =
        ((u + 1) % cfg.log_interval == 0) || (u + 1 == result.updates);
    std::vector<std::future<std::vector<DeviceBuffer>>> futures;
    futures.reserve(cfg.num_cores);
    for (std::size_t c = 0; c < cfg.num_cores; ++c) {
      const CoreId id{c};
      CoreState& cs = cores[c];
      futures.push_back(mesh.submit(
          id, "anakin_unit",
          [&mesh, &cs, &cfg, &agent, dims, P, group, act_master, u, c, log_now](
              CoreExec& ctx) {
            auto params = ctx.f32_mut(cs.params);
            auto velocity = ctx.f32_mut(cs.velocity);
            auto env_state = ctx.u32_mut(cs.env_state);
            auto metrics = ctx.f32_mut(cs.metrics);

            DeviceBuffer grads = ctx.alloc_f32({P});
            anakin_unit(params, dims, env_state, act_master, u,
                        c * cfg.batch_per_core, cfg, agent, ctx.f32_mut(grads),
                        metrics);

            const DeviceBuffer reduced = ctx.mesh().all_reduce_mean(group, grads);
            sgd_update_flat(params, ctx.f32(reduced), velocity,
                            agent.learning_rate, agent.momentum);

            DeviceBuffer hash = ctx.alloc_u32({2});
            const std::uint64_t h = fnv1a64(params);
            ctx.u32_mut(hash)[0] = static_cast<std::uint32_t>(h);
            ctx.u32_mut(hash)[1] = static_cast<std::uint32_t>(h >> 32);

            std::vector<DeviceBuffer> outs{hash};
            if (log_now) {
              DeviceBuffer contribution = ctx.alloc_f32({detail::kAnakinMetricCount});
              auto span = ctx.f32_mut(contribution);
              for (std::size_t i = 0; i < span.size(); ++i) span[i] = metrics[i];
              const DeviceBuffer summed = ctx.mesh().all_reduce_sum(group, contribution);
              for (std::size_t i = 0; i < metrics.size(); ++i) metrics[i] = 0.0f;
              outs.push_back(summed);
            }
            return outs;
          },
          {cs.params, cs.velocity, cs.env_state, cs.metrics}));
    }

    std::vector<std::vector<DeviceBuffer>> outputs;
    outputs.reserve(cfg.num_cores);
    for (auto& f : futures) outputs.push_back(f.get());

    if (u + 1 == warmup_updates) t_steady = std::chrono::steady_clock::now();

    if (options.sync_check_interval != 0 &&
        ((u + 1) % options.sync_check_interval == 0 || u + 1 == result.updates)) {
      const auto want = mesh.get_u32(outputs[0][0]);
      for (std::size_t c = 1; c < cfg.num_cores; ++c)
        if (mesh.get_u32(outputs[c][0]) != want) result.replicas_in_sync = false;
    }

    if (options.capture_params)
      result.param_history.push_back(mesh.get(cores[0].params).data);

    if (log_now) {
      const Tensor summed = mesh.get(outputs[0].at(1));
      const auto now = std::chrono::steady_clock::now();
      const double window_sec = std::chrono::duration<double>(now - t_window).count();
      t_window = now;
      const double episodes = summed.data[detail::kMetEpisodes];
      const double updates_in_window = summed.data[detail::kMetUpdates] /
                                       static_cast<double>(cfg.num_cores);
      AnakinLogRow row;
      row.update = u + 1;
      row.env_steps = (u + 1) * cfg.steps_per_update();
      row.mean_return =
          episodes > 0 ? summed.data[detail::kMetReturnSum] / episodes : 0.0;
      row.loss = updates_in_window > 0
                     ? summed.data[detail::kMetLossSum] /
                           (updates_in_window * cfg.num_cores)
                     : 0.0;
      row.steps_per_sec = window_sec > 0
                              ? static_cast<double>(updates_in_window *
                                                    cfg.steps_per_update()) /
                                    window_sec
                              : 0.0;
      result.log.push_back(row);
    }
  }

  const auto t_end = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
  result.env_steps = result.updates * cfg.steps_per_update();
  result.steps_per_sec = result.env_steps / result.wall_seconds;
  const double steady_sec = std::chrono::duration<double>(t_end - t_steady).count();
  const std::uint64_t steady_steps =
      (result.updates - warmup_updates) * cfg.steps_per_update();
  result.steps_per_sec_steady =
      steady_sec > 0 ? steady_steps / steady_sec : result.steps_per_sec;

  result.h2d_bytes_final = mesh.total_h2d_bytes();
  const std::vector<float> final_flat = mesh.get(cores[0].params).data;
  result.final_params = mlp_init(init_key, dims.obs_dim, dims.hidden_dim,
                                 dims.num_actions);
  result.final_params.unflatten(final_flat);
  return result;
}

}  // namespace podracer
