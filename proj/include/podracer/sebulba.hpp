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
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "podracer/agent.hpp"
#include "podracer/batched_env.hpp"
#include "podracer/common.hpp"
#include "podracer/env_catch.hpp"
#include "podracer/mesh.hpp"
#include "podracer/network.hpp"
#include "podracer/rng.hpp"
#include "podracer/trajectory.hpp"
#include "podracer/worker_pool.hpp"

namespace podracer {

/// Decomposed runtime: host-stepped batched environments feed actor cores
/// for batched inference; fixed-length trajectories are sharded across the
/// learner cores over the device fabric; learners average gradients with a
/// collective that spans every replica and push fresh parameters back to
/// the actor cores after each update.
struct SebulbaConfig {
  std::size_t actor_cores = 2;             // A per replica
  std::size_t learner_cores = 6;           // L = 3A by default on an 8-core host
  std::size_t threads_per_actor_core = 1;  // w
  std::size_t actor_batch = 32;            // B, per actor thread
  std::size_t trajectory_length = 20;      // T
  std::size_t queue_capacity = 4;          // q, per replica
  std::size_t replicas = 1;                // R
  std::uint64_t total_frames = 0;
  std::uint64_t seed = 0;
  std::size_t env_workers = 2;        // shared env pool size, per replica
  std::uint32_t env_step_work = 0;    // CPU busy-work per sub-env step
  std::uint32_t env_step_latency_us = 0;  // wall latency per batched step
  std::size_t split_updates = 1;      // N updates per trajectory (time split)
  std::size_t log_interval = 10;      // rounds per metrics row
  std::uint32_t injected_learner_delay_ms = 0;  // slows the learner (tests)

  std::uint64_t frames_per_round() const {
    return static_cast<std::uint64_t>(replicas) * trajectory_length * actor_batch;
  }
  std::uint64_t num_rounds() const {
    const std::uint64_t per = frames_per_round();
    return (total_frames + per - 1) / per;
  }
  std::uint64_t updates_per_round() const { return split_updates; }

  void validate(const MeshConfig& mesh) const {
    if (actor_cores == 0 || learner_cores == 0)
      throw ConfigError("sebulba: actor_cores and learner_cores must be positive");
    if (actor_cores + learner_cores > mesh.cores_per_host)
      throw ConfigError("sebulba: actor_cores + learner_cores = " +
                        std::to_string(actor_cores + learner_cores) +
                        " exceeds cores_per_host = " +
                        std::to_string(mesh.cores_per_host));
    if (threads_per_actor_core == 0)
      throw ConfigError("sebulba: threads_per_actor_core must be >= 1");
    if (actor_batch == 0 || trajectory_length == 0)
      throw ConfigError("sebulba: actor_batch and trajectory_length must be positive");
    if (actor_batch % learner_cores != 0)
      throw ConfigError("sebulba: actor_batch must be divisible by learner_cores");
    if (queue_capacity == 0) throw ConfigError("sebulba: queue_capacity must be >= 1");
    if (replicas == 0) throw ConfigError("sebulba: replicas must be >= 1");
    if (split_updates == 0 || trajectory_length % split_updates != 0)
      throw ConfigError("sebulba: split_updates must divide trajectory_length");
    if (total_frames == 0) throw ConfigError("sebulba: total_frames must be positive");
    if (env_workers == 0) throw ConfigError("sebulba: env_workers must be >= 1");
    if (log_interval == 0) throw ConfigError("sebulba: log_interval must be >= 1");
    if (mesh.num_cores < replicas * mesh.cores_per_host)
      throw ConfigError("sebulba: mesh provides " + std::to_string(mesh.num_cores) +
                        " cores; " + std::to_string(replicas) +
                        " replicas need " +
                        std::to_string(replicas * mesh.cores_per_host));
  }
};

/// A published, internally consistent parameter version: one device-resident
/// copy per actor core of the replica.
struct ParamVersion {
  std::uint64_t version = 0;
  std::vector<DeviceBuffer> actor_params;  // by local actor core index
};

/// Device-resident shard of one trajectory on a learner core.
struct TrajectoryShard {
  DeviceBuffer observations;   // f32 [T, Bl, O]
  DeviceBuffer actions;        // u32 [T, Bl]
  DeviceBuffer behavior_logits;  // f32 [T, Bl, A]
  DeviceBuffer rewards;        // f32 [T, Bl]
  DeviceBuffer dones;          // u32 [T, Bl]
  DeviceBuffer bootstrap;      // f32 [Bl, O]
};

/// Queue element: references to the trajectory's shards, already resident
/// on the learner cores, plus provenance needed for the off-policy
/// bookkeeping.
struct TrajectoryHandle {
  std::vector<TrajectoryShard> shards;  // by local learner core index
  std::size_t replica = 0;
  std::size_t actor_core = 0;    // local index
  std::size_t actor_thread = 0;
  std::uint64_t traj_index = 0;
  std::vector<std::uint32_t> step_versions;  // parameter version per step [T]
  std::uint64_t version_first = 0;
  std::uint64_t version_last = 0;
};

namespace detail {

class ParamSlot {
 public:
  std::shared_ptr<const ParamVersion> load() const {
    std::lock_guard lk(m_);
    return current_;
  }
  void store(std::shared_ptr<const ParamVersion> v) {
    std::lock_guard lk(m_);
    current_ = std::move(v);
  }

 private:
  mutable std::mutex m_;
  std::shared_ptr<const ParamVersion> current_;
};

/// Bounded multi-producer single-consumer channel. Occupancy is bounded by
/// the trajectory credits, so push never blocks; pop blocks until data or
/// close.
class TrajectoryQueue {
 public:
  explicit TrajectoryQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(TrajectoryHandle handle) {
    {
      std::lock_guard lk(m_);
      q_.push_back(std::move(handle));
      max_occupancy_ = std::max(max_occupancy_, q_.size());
      if (q_.size() > capacity_)
        throw MeshError("trajectory queue exceeded its capacity");
    }
    cv_.notify_one();
  }

  std::optional<TrajectoryHandle> pop() {
    std::unique_lock lk(m_);
    cv_.wait(lk, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    TrajectoryHandle h = std::move(q_.front());
    q_.pop_front();
    return h;
  }

  void close() {
    {
      std::lock_guard lk(m_);
      closed_ = true;
      q_.clear();  // shutdown drains and discards in-flight trajectories
    }
    cv_.notify_all();
  }

  std::size_t occupancy() const {
    std::lock_guard lk(m_);
    return q_.size();
  }
  std::size_t max_occupancy() const {
    std::lock_guard lk(m_);
    return max_occupancy_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::deque<TrajectoryHandle> q_;
  std::size_t max_occupancy_ = 0;
  bool closed_ = false;
};

/// Trajectory credits: an actor thread takes a credit before it starts
/// collecting a trajectory and the learner returns it once that trajectory
/// is fully processed and the updated parameters are published. This is the
/// backpressure mechanism: at most queue_capacity trajectories exist
/// between collection start and consumption, bounding both the queue
/// occupancy and the parameter lag, and making the capacity-1 single-thread
/// configuration exactly synchronous.
class TrajectoryCredits {
 public:
  explicit TrajectoryCredits(std::size_t credits) : available_(credits) {}

  bool acquire() {
    std::unique_lock lk(m_);
    if (available_ == 0) {
      ++blocked_events_;
      const auto t0 = std::chrono::steady_clock::now();
      cv_.wait(lk, [&] { return closed_ || available_ > 0; });
      blocked_ns_ += std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    }
    if (closed_) return false;
    --available_;
    return true;
  }

  void release() {
    {
      std::lock_guard lk(m_);
      ++available_;
    }
    cv_.notify_one();
  }

  void close() {
    {
      std::lock_guard lk(m_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  std::uint64_t blocked_events() const {
    std::lock_guard lk(m_);
    return blocked_events_;
  }
  double blocked_seconds() const {
    std::lock_guard lk(m_);
    return static_cast<double>(blocked_ns_) * 1e-9;
  }

 private:
  mutable std::mutex m_;
  std::condition_variable cv_;
  std::size_t available_;
  bool closed_ = false;
  std::uint64_t blocked_events_ = 0;
  std::uint64_t blocked_ns_ = 0;
};

/// Completed-episode accounting shared by all actor threads.
class EpisodeStats {
 public:
  void push(float episode_return) {
    std::lock_guard lk(m_);
    ++window_count_;
    window_sum_ += episode_return;
    recent_.push_back(episode_return);
    if (recent_.size() > kRecentCap) recent_.pop_front();
  }

  std::pair<std::uint64_t, double> take_window() {
    std::lock_guard lk(m_);
    const auto result = std::make_pair(window_count_, window_sum_);
    window_count_ = 0;
    window_sum_ = 0.0;
    return result;
  }

  double recent_mean() const {
    std::lock_guard lk(m_);
    if (recent_.empty()) return 0.0;
    double sum = 0.0;
    for (float r : recent_) sum += r;
    return sum / static_cast<double>(recent_.size());
  }

 private:
  static constexpr std::size_t kRecentCap = 2000;
  mutable std::mutex m_;
  std::uint64_t window_count_ = 0;
  double window_sum_ = 0.0;
  std::deque<float> recent_;
};

}  // namespace detail

/// Copies the accumulated on-device trajectory into per-learner shard
/// buffers (batch slots [l*Bl, (l+1)*Bl) to learner l) and moves each shard
/// over the device fabric. Returns the shards, resident on their learner
/// cores.
inline std::vector<TrajectoryShard> shard_trajectory_to_learners(
    Mesh& mesh, CoreId actor_core, const DeviceBuffer& observations,
    const DeviceBuffer& actions, const DeviceBuffer& behavior_logits,
    const DeviceBuffer& rewards, const DeviceBuffer& dones,
    const DeviceBuffer& bootstrap, std::span<const CoreId> learner_cores,
    std::size_t T, std::size_t B, std::size_t O, std::size_t A) {
  const std::size_t L = learner_cores.size();
  if (L == 0 || B % L != 0)
    throw ConfigError("shard: batch must divide evenly across learner cores");
  const std::size_t Bl = B / L;

  auto outs = mesh.run_on_core(
      actor_core, "shard",
      [&](CoreExec& ctx) {
        const auto obs = ctx.f32(observations);
        const auto act = ctx.u32(actions);
        const auto logit = ctx.f32(behavior_logits);
        const auto rew = ctx.f32(rewards);
        const auto don = ctx.u32(dones);
        const auto boot = ctx.f32(bootstrap);

        std::vector<DeviceBuffer> shard_bufs;
        shard_bufs.reserve(6 * L);
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t slot0 = l * Bl;
          DeviceBuffer s_obs = ctx.alloc_f32({T, Bl, O});
          DeviceBuffer s_act = ctx.alloc_u32({T, Bl});
          DeviceBuffer s_log = ctx.alloc_f32({T, Bl, A});
          DeviceBuffer s_rew = ctx.alloc_f32({T, Bl});
          DeviceBuffer s_don = ctx.alloc_u32({T, Bl});
          DeviceBuffer s_boot = ctx.alloc_f32({Bl, O});
          auto d_obs = ctx.f32_mut(s_obs);
          auto d_act = ctx.u32_mut(s_act);
          auto d_log = ctx.f32_mut(s_log);
          auto d_rew = ctx.f32_mut(s_rew);
          auto d_don = ctx.u32_mut(s_don);
          auto d_boot = ctx.f32_mut(s_boot);
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t src = t * B + slot0;
            const std::size_t dst = t * Bl;
            std::copy_n(obs.begin() + src * O, Bl * O, d_obs.begin() + dst * O);
            std::copy_n(act.begin() + src, Bl, d_act.begin() + dst);
            std::copy_n(logit.begin() + src * A, Bl * A, d_log.begin() + dst * A);
            std::copy_n(rew.begin() + src, Bl, d_rew.begin() + dst);
            std::copy_n(don.begin() + src, Bl, d_don.begin() + dst);
          }
          std::copy_n(boot.begin() + slot0 * O, Bl * O, d_boot.begin());
          shard_bufs.push_back(s_obs);
          shard_bufs.push_back(s_act);
          shard_bufs.push_back(s_log);
          shard_bufs.push_back(s_rew);
          shard_bufs.push_back(s_don);
          shard_bufs.push_back(s_boot);
        }
        return shard_bufs;
      },
      {observations, actions, behavior_logits, rewards, dones, bootstrap});

  std::vector<TrajectoryShard> shards(L);
  for (std::size_t l = 0; l < L; ++l) {
    const CoreId dst = learner_cores[l];
    shards[l].observations = mesh.device_transfer(outs[6 * l + 0], dst);
    shards[l].actions = mesh.device_transfer(outs[6 * l + 1], dst);
    shards[l].behavior_logits = mesh.device_transfer(outs[6 * l + 2], dst);
    shards[l].rewards = mesh.device_transfer(outs[6 * l + 3], dst);
    shards[l].dones = mesh.device_transfer(outs[6 * l + 4], dst);
    shards[l].bootstrap = mesh.device_transfer(outs[6 * l + 5], dst);
  }
  return shards;
}

/// Reassembles a host-side trajectory from device shards (tests, replay).
inline Trajectory gather_shards(Mesh& mesh, const std::vector<TrajectoryShard>& shards,
                                std::size_t T, std::size_t O, std::size_t A) {
  std::vector<Trajectory> host;
  host.reserve(shards.size());
  for (const auto& s : shards) {
    const std::size_t Bl = s.actions.shape().at(1);
    Trajectory t = Trajectory::make(T, Bl, O, A);
    t.observations = mesh.get(s.observations).data;
    const auto act = mesh.get_u32(s.actions);
    t.actions.assign(act.begin(), act.end());
    t.behavior_logits = mesh.get(s.behavior_logits).data;
    t.rewards = mesh.get(s.rewards).data;
    const auto don = mesh.get_u32(s.dones);
    for (std::size_t i = 0; i < don.size(); ++i) t.dones[i] = don[i] ? 1 : 0;
    t.bootstrap_observation = mesh.get(s.bootstrap).data;
    host.push_back(std::move(t));
  }
  return trajectory_concat(host);
}

struct SebulbaLogRow {
  std::uint64_t update = 0;  // learner update count
  std::uint64_t frames = 0;
  double mean_return = 0.0;
  double frames_per_sec = 0.0;
  double queue_occupancy = 0.0;
  double mean_param_lag = 0.0;
};

struct SebulbaResult {
  Params final_params;
  std::vector<SebulbaLogRow> log;
  double wall_seconds = 0.0;
  double frames_per_sec = 0.0;
  std::uint64_t frames = 0;
  std::uint64_t updates = 0;
  double final_mean_return = 0.0;
  bool learners_in_sync = true;
  std::size_t max_queue_occupancy = 0;
  std::uint64_t max_param_lag = 0;
  std::uint64_t actor_blocked_events = 0;
  double actor_blocked_seconds = 0.0;
  double actor_core_busy_seconds = 0.0;
  /// test hooks, filled on request
  std::vector<std::vector<float>> param_history;
  std::map<std::uint64_t, std::vector<float>> version_archive;
  struct ConsumedRecord {
    Trajectory trajectory;
    std::vector<std::uint32_t> step_versions;
  };
  std::vector<ConsumedRecord> consumed;
};

struct SebulbaOptions {
  bool capture_params = false;         // flat params after every update
  bool archive_param_versions = false; // host copy of every published version
  bool record_consumed = false;        // gather every consumed trajectory
  std::size_t record_consumed_limit = 2000;
};

namespace detail {

struct SebulbaShared {
  const SebulbaConfig* cfg;
  const AgentConfig* agent;
  MlpDims dims;
  Mesh* mesh;
  RngKey master;
  std::atomic<bool> stop{false};
  EpisodeStats episodes;
  std::mutex result_m;  // guards the test-hook fields in result
  SebulbaResult* result;
};

struct ReplicaRuntime {
  std::size_t index = 0;
  std::size_t core_base = 0;  // first global core of this replica
  std::vector<CoreId> actor_core_ids;
  std::vector<CoreId> learner_core_ids;
  std::shared_ptr<WorkerPool> env_pool;
  std::unique_ptr<TrajectoryQueue> queue;
  std::unique_ptr<TrajectoryCredits> credits;
  ParamSlot slot;
  std::vector<DeviceBuffer> learner_params;    // by local learner index
  std::vector<DeviceBuffer> learner_velocity;  // by local learner index
  std::atomic<std::uint64_t> published_version{0};
};

inline void actor_thread_main(SebulbaShared& shared, ReplicaRuntime& rep,
                              std::size_t local_core, std::size_t thread_idx) {
  const SebulbaConfig& cfg = *shared.cfg;
  Mesh& mesh = *shared.mesh;
  const MlpDims dims = shared.dims;
  const std::size_t T = cfg.trajectory_length, B = cfg.actor_batch;
  const std::size_t O = dims.obs_dim, A = dims.num_actions;
  const CoreId core = rep.actor_core_ids[local_core];

  BatchedEnv env(B,
                 fold_in(fold_in(shared.master, 1), rep.index, local_core, thread_idx),
                 rep.env_pool, cfg.env_step_work, cfg.env_step_latency_us);
  const RngKey act_key =
      fold_in(fold_in(shared.master, 2), rep.index, local_core, thread_idx);

  // persistent on-device trajectory accumulators for this thread
  auto traj_bufs = mesh.run_on_core(core, "init", [&](CoreExec& ctx) {
    return std::vector<DeviceBuffer>{ctx.alloc_f32({T, B, O}),
                                     ctx.alloc_u32({T, B}),
                                     ctx.alloc_f32({T, B, A})};
  });
  DeviceBuffer obs_traj = traj_bufs[0];
  DeviceBuffer act_traj = traj_bufs[1];
  DeviceBuffer logit_traj = traj_bufs[2];

  std::vector<float> rewards_host(T * B);
  std::vector<std::uint32_t> dones_host(T * B);
  std::vector<float> running_return(B, 0.0f);
  std::vector<std::uint32_t> step_versions(T);

  for (std::uint64_t traj_index = 0;; ++traj_index) {
    if (!rep.credits->acquire()) break;
    if (shared.stop.load(std::memory_order_acquire)) break;

    bool aborted = false;
    for (std::size_t t = 0; t < T; ++t) {
      if (shared.stop.load(std::memory_order_acquire)) {
        aborted = true;
        break;
      }
      // pick up the freshest published parameters at each inference step
      const std::shared_ptr<const ParamVersion> pv = rep.slot.load();
      step_versions[t] = static_cast<std::uint32_t>(pv->version);
      const DeviceBuffer& params_buf = pv->actor_params[local_core];

      const DeviceBuffer obs_buf =
          mesh.put(core, env.observations(), {B, O});
      const RngKey step_key = fold_in(act_key, traj_index * T + t);

      auto outs = mesh.run_on_core(
          core, "act",
          [&, t](CoreExec& ctx) {
            const auto params = ctx.f32(params_buf);
            const auto obs = ctx.f32(obs_buf);
            auto obs_acc = ctx.f32_mut(obs_traj);
            auto act_acc = ctx.u32_mut(act_traj);
            auto logit_acc = ctx.f32_mut(logit_traj);
            std::copy(obs.begin(), obs.end(), obs_acc.begin() + t * B * O);
            DeviceBuffer actions_out = ctx.alloc_u32({B});
            const auto m = mlp_view<float>(params, dims);
            select_actions_rows(m, obs, B, step_key, 0, ctx.u32_mut(actions_out),
                                logit_acc.subspan(t * B * A, B * A));
            const auto acts = ctx.u32(actions_out);
            std::copy(acts.begin(), acts.end(), act_acc.begin() + t * B);
            return std::vector<DeviceBuffer>{actions_out};
          },
          {params_buf, obs_buf, obs_traj, act_traj, logit_traj});

      const std::vector<std::uint32_t> actions = mesh.get_u32(outs[0]);
      env.step(actions);
      for (std::size_t b = 0; b < B; ++b) {
        rewards_host[t * B + b] = env.rewards()[b];
        dones_host[t * B + b] = env.dones()[b];
        running_return[b] += env.rewards()[b];
        if (env.dones()[b]) {
          shared.episodes.push(running_return[b]);
          running_return[b] = 0.0f;
        }
      }
    }
    if (aborted) {
      rep.credits->release();
      break;
    }

    const DeviceBuffer rewards_buf = mesh.put(core, rewards_host, {T, B});
    const DeviceBuffer dones_buf = mesh.put_u32(core, dones_host, {T, B});
    const DeviceBuffer boot_buf = mesh.put(core, env.observations(), {B, O});

    TrajectoryHandle handle;
    handle.shards = shard_trajectory_to_learners(
        mesh, core, obs_traj, act_traj, logit_traj, rewards_buf, dones_buf,
        boot_buf, rep.learner_core_ids, T, B, O, A);
    handle.replica = rep.index;
    handle.actor_core = local_core;
    handle.actor_thread = thread_idx;
    handle.traj_index = traj_index;
    handle.step_versions = step_versions;
    handle.version_first = step_versions.front();
    handle.version_last = step_versions.back();
    rep.queue->push(std::move(handle));
  }
}

inline void learner_thread_main(SebulbaShared& shared, ReplicaRuntime& rep,
                                const CoreGroup& global_learner_group,
                                std::uint64_t num_rounds,
                                const SebulbaOptions& options,
                                std::vector<SebulbaLogRow>* log_rows,
                                std::atomic<std::uint64_t>* frames_done) {
  const SebulbaConfig& cfg = *shared.cfg;
  const AgentConfig& agent = *shared.agent;
  Mesh& mesh = *shared.mesh;
  const MlpDims dims = shared.dims;
  const std::size_t T = cfg.trajectory_length, B = cfg.actor_batch;
  const std::size_t L = cfg.learner_cores;
  const std::size_t Bl = B / L;
  const std::size_t O = dims.obs_dim, A = dims.num_actions;
  const std::size_t N = cfg.split_updates;
  const std::size_t Tw = T / N;
  const std::size_t P = dims.param_count();

  double lag_sum = 0.0, occupancy_sum = 0.0;
  std::uint64_t lag_rounds = 0;
  auto window_start = std::chrono::steady_clock::now();
  std::uint64_t window_frames = 0;

  for (std::uint64_t round = 0; round < num_rounds; ++round) {
    std::optional<TrajectoryHandle> handle = rep.queue->pop();
    if (!handle) break;  // closed

    occupancy_sum += static_cast<double>(rep.queue->occupancy());
    const std::uint64_t lag =
        rep.published_version.load(std::memory_order_relaxed) - handle->version_first;
    lag_sum += static_cast<double>(lag);
    ++lag_rounds;
    {
      std::lock_guard lk(shared.result_m);
      shared.result->max_param_lag = std::max(shared.result->max_param_lag, lag);
      if (options.record_consumed &&
          shared.result->consumed.size() < options.record_consumed_limit) {
        SebulbaResult::ConsumedRecord rec;
        rec.trajectory = gather_shards(mesh, handle->shards, T, O, A);
        rec.step_versions = handle->step_versions;
        shared.result->consumed.push_back(std::move(rec));
      }
    }

    for (std::size_t split = 0; split < N; ++split) {
      std::vector<std::future<std::vector<DeviceBuffer>>> futures;
      futures.reserve(L);
      for (std::size_t l = 0; l < L; ++l) {
        const CoreId core = rep.learner_core_ids[l];
        const TrajectoryShard shard = handle->shards[l];
        DeviceBuffer params_buf = rep.learner_params[l];
        DeviceBuffer velocity_buf = rep.learner_velocity[l];
        futures.push_back(mesh.submit(
            core, "learn",
            [&, split, shard, params_buf, velocity_buf](CoreExec& ctx) {
              auto params = ctx.f32_mut(params_buf);
              auto velocity = ctx.f32_mut(velocity_buf);
              const auto obs = ctx.f32(shard.observations);
              const auto act = ctx.u32(shard.actions);
              const auto logit = ctx.f32(shard.behavior_logits);
              const auto rew = ctx.f32(shard.rewards);
              const auto don = ctx.u32(shard.dones);
              const auto boot = ctx.f32(shard.bootstrap);

              // materialize the time window as a working trajectory
              Trajectory w = Trajectory::make(Tw, Bl, O, A);
              const std::size_t t0 = split * Tw;
              std::copy_n(obs.begin() + t0 * Bl * O, Tw * Bl * O,
                          w.observations.begin());
              std::copy_n(act.begin() + t0 * Bl, Tw * Bl, w.actions.begin());
              std::copy_n(logit.begin() + t0 * Bl * A, Tw * Bl * A,
                          w.behavior_logits.begin());
              std::copy_n(rew.begin() + t0 * Bl, Tw * Bl, w.rewards.begin());
              for (std::size_t i = 0; i < Tw * Bl; ++i)
                w.dones[i] = don[t0 * Bl + i] ? 1 : 0;
              if (split + 1 == N)
                std::copy_n(boot.begin(), Bl * O, w.bootstrap_observation.begin());
              else
                std::copy_n(obs.begin() + (t0 + Tw) * Bl * O, Bl * O,
                            w.bootstrap_observation.begin());

              std::vector<float> targets(Tw * Bl), advantages(Tw * Bl);
              compute_update_targets_flat(params, dims, w, agent, targets,
                                          advantages);
              LossBatchView batch;
              batch.unroll_len = Tw;
              batch.batch = Bl;
              batch.observations = w.observations;
              batch.actions = w.actions;
              batch.advantages = advantages;
              batch.value_targets = targets;
              DeviceBuffer grads = ctx.alloc_f32({P});
              const LossMetrics loss = loss_and_grads_flat(
                  params, dims, batch, agent.loss_costs(), ctx.f32_mut(grads));

              const DeviceBuffer reduced =
                  ctx.mesh().all_reduce_mean(global_learner_group, grads);
              sgd_update_flat(params, ctx.f32(reduced), velocity,
                              agent.learning_rate, agent.momentum);

              DeviceBuffer hash = ctx.alloc_u32({2});
              const std::uint64_t h = fnv1a64(params);
              ctx.u32_mut(hash)[0] = static_cast<std::uint32_t>(h);
              ctx.u32_mut(hash)[1] = static_cast<std::uint32_t>(h >> 32);
              DeviceBuffer loss_out = ctx.alloc_f32({2});
              ctx.f32_mut(loss_out)[0] = loss.total;
              ctx.f32_mut(loss_out)[1] = loss.entropy;
              return std::vector<DeviceBuffer>{hash, loss_out};
            },
            {params_buf, velocity_buf, shard.observations, shard.actions,
             shard.behavior_logits, shard.rewards, shard.dones, shard.bootstrap}));
      }

      std::vector<std::vector<DeviceBuffer>> outs;
      outs.reserve(L);
      for (auto& f : futures) outs.push_back(f.get());

      const auto hash0 = mesh.get_u32(outs[0][0]);
      for (std::size_t l = 1; l < L; ++l)
        if (mesh.get_u32(outs[l][0]) != hash0) {
          std::lock_guard lk(shared.result_m);
          shared.result->learners_in_sync = false;
        }

      if (cfg.injected_learner_delay_ms > 0)
        std::this_thread::sleep_for(
            std::chrono::milliseconds(cfg.injected_learner_delay_ms));

      // publish the new version to this replica's actor cores, device to
      // device, before returning the trajectory credit
      auto version = std::make_shared<ParamVersion>();
      version->version =
          rep.published_version.load(std::memory_order_relaxed) + 1;
      version->actor_params.reserve(rep.actor_core_ids.size());
      for (const CoreId actor : rep.actor_core_ids)
        version->actor_params.push_back(
            mesh.device_transfer(rep.learner_params[0], actor));
      rep.slot.store(version);
      rep.published_version.store(version->version, std::memory_order_relaxed);

      if (options.capture_params || options.archive_param_versions) {
        std::lock_guard lk(shared.result_m);
        if (rep.index == 0) {
          const std::vector<float> flat = mesh.get(rep.learner_params[0]).data;
          if (options.capture_params) shared.result->param_history.push_back(flat);
          if (options.archive_param_versions)
            shared.result->version_archive[version->version] = flat;
        }
      }
    }

    rep.credits->release();
    const std::uint64_t frames =
        frames_done->fetch_add(T * B, std::memory_order_relaxed) + T * B;
    window_frames += T * B;

    if (rep.index == 0 &&
        ((round + 1) % cfg.log_interval == 0 || round + 1 == num_rounds)) {
      const auto now = std::chrono::steady_clock::now();
      const double sec = std::chrono::duration<double>(now - window_start).count();
      const auto [ep_count, ep_sum] = shared.episodes.take_window();
      SebulbaLogRow row;
      row.update = (round + 1) * N;
      row.frames = frames;
      row.mean_return = ep_count > 0 ? ep_sum / ep_count : 0.0;
      row.frames_per_sec =
          sec > 0 ? static_cast<double>(window_frames) * cfg.replicas / sec : 0.0;
      row.queue_occupancy = lag_rounds > 0 ? occupancy_sum / lag_rounds : 0.0;
      row.mean_param_lag = lag_rounds > 0 ? lag_sum / lag_rounds : 0.0;
      log_rows->push_back(row);
      window_start = now;
      window_frames = 0;
      lag_sum = occupancy_sum = 0.0;
      lag_rounds = 0;
    }
  }
}

}  // namespace detail

inline SebulbaResult sebulba_train(Mesh& mesh, const SebulbaConfig& cfg,
                                   const AgentConfig& agent,
                                   const SebulbaOptions& options = {}) {
  cfg.validate(mesh.config());
  agent.validate();

  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  const std::size_t P = dims.param_count();
  const std::size_t cph = mesh.config().cores_per_host;
  const std::size_t R = cfg.replicas;
  const RngKey master = make_key(cfg.seed);
  const Params init = mlp_init(fold_in(master, 0), dims.obs_dim, dims.hidden_dim,
                               dims.num_actions);
  const std::vector<float> init_flat = init.flatten();

  SebulbaResult result;
  detail::SebulbaShared shared;
  shared.cfg = &cfg;
  shared.agent = &agent;
  shared.dims = dims;
  shared.mesh = &mesh;
  shared.master = master;
  shared.result = &result;

  // global all-reduce group over every replica's learner cores
  std::vector<CoreId> all_learners;
  std::vector<std::unique_ptr<detail::ReplicaRuntime>> reps;
  for (std::size_t r = 0; r < R; ++r) {
    auto rep = std::make_unique<detail::ReplicaRuntime>();
    rep->index = r;
    rep->core_base = r * cph;
    for (std::size_t a = 0; a < cfg.actor_cores; ++a)
      rep->actor_core_ids.push_back(CoreId{rep->core_base + a});
    for (std::size_t l = 0; l < cfg.learner_cores; ++l) {
      rep->learner_core_ids.push_back(CoreId{rep->core_base + cfg.actor_cores + l});
      all_learners.push_back(rep->learner_core_ids.back());
    }
    rep->env_pool = std::make_shared<WorkerPool>(cfg.env_workers);
    rep->queue = std::make_unique<detail::TrajectoryQueue>(cfg.queue_capacity);
    rep->credits = std::make_unique<detail::TrajectoryCredits>(cfg.queue_capacity);
    reps.push_back(std::move(rep));
  }
  const CoreGroup learner_group(all_learners);

  // version 0: identical params on every learner and actor core
  for (auto& rep : reps) {
    for (const CoreId l : rep->learner_core_ids) {
      rep->learner_params.push_back(mesh.put(l, init_flat, {P}));
      rep->learner_velocity.push_back(mesh.put(l, std::vector<float>(P, 0.0f), {P}));
    }
    auto v0 = std::make_shared<ParamVersion>();
    v0->version = 0;
    for (const CoreId a : rep->actor_core_ids)
      v0->actor_params.push_back(mesh.put(a, init_flat, {P}));
    rep->slot.store(v0);
  }

  if (options.archive_param_versions) result.version_archive[0] = init_flat;

  const std::uint64_t num_rounds = cfg.num_rounds();
  std::atomic<std::uint64_t> frames_done{0};
  std::vector<SebulbaLogRow> log_rows;

  const auto t_start = std::chrono::steady_clock::now();

  std::vector<std::thread> actor_threads;
  std::vector<std::thread> learner_threads;
  for (auto& rep : reps) {
    for (std::size_t a = 0; a < cfg.actor_cores; ++a)
      for (std::size_t w = 0; w < cfg.threads_per_actor_core; ++w)
        actor_threads.emplace_back(
            [&shared, rep = rep.get(), a, w] { actor_thread_main(shared, *rep, a, w); });
    learner_threads.emplace_back([&shared, rep = rep.get(), &learner_group,
                                  num_rounds, &options, &log_rows, &frames_done] {
      learner_thread_main(shared, *rep, learner_group, num_rounds, options,
                          &log_rows, &frames_done);
    });
  }

  for (auto& t : learner_threads) t.join();
  shared.stop.store(true, std::memory_order_release);
  for (auto& rep : reps) {
    rep->credits->close();
    rep->queue->close();
  }
  for (auto& t : actor_threads) t.join();

  const auto t_end = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(t_end - t_start).count();
  result.frames = frames_done.load();
  result.frames_per_sec = result.frames / result.wall_seconds;
  result.updates = num_rounds * cfg.updates_per_round();
  result.final_mean_return = shared.episodes.recent_mean();
  result.log = std::move(log_rows);

  for (auto& rep : reps) {
    result.max_queue_occupancy =
        std::max(result.max_queue_occupancy, rep->queue->max_occupancy());
    result.actor_blocked_events += rep->credits->blocked_events();
    result.actor_blocked_seconds += rep->credits->blocked_seconds();
    for (const CoreId a : rep->actor_core_ids)
      result.actor_core_busy_seconds += mesh.busy_seconds(a);
  }

  const std::vector<float> final_flat = mesh.get(reps[0]->learner_params[0]).data;
  result.final_params = init;
  result.final_params.unflatten(final_flat);
  return result;
}

}  // namespace podracer
