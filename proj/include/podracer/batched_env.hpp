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

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <thread>
#include <vector>

#include "podracer/common.hpp"
#include "podracer/env_catch.hpp"
#include "podracer/rng.hpp"
#include "podracer/worker_pool.hpp"

namespace podracer {

namespace detail {

// Spin loop standing in for the per-step CPU cost of a real host
// environment (an emulator, a physics engine). Pure: no effect on results.
inline void env_busy_work(std::uint32_t iterations) {
  volatile std::uint64_t sink = 0x9e3779b97f4a7c15ull;
  std::uint64_t h = sink;
  for (std::uint32_t i = 0; i < iterations; ++i) h = mix64(h + i);
  sink = h;
}

}  // namespace detail

/// B independent Catch instances behind a single batch interface: takes a
/// batch of actions, returns a batch of observations/rewards/dones, steps
/// the sub-environments on a shared worker pool. Terminated sub-envs
/// auto-reset: the fresh episode's first observation is returned together
/// with the terminal reward and done flag.
///
/// One caller at a time may drive an instance; distinct instances step
/// concurrently on a shared pool.
class BatchedEnv {
 public:
  /// Sub-env i is seeded by hashing (seed, i), so results never depend on
  /// the worker count. Two knobs model an expensive host environment:
  /// step_work burns that many hash iterations of CPU per sub-env step,
  /// step_latency_us stalls each batched step call for that long without
  /// consuming CPU (an external emulator the host waits on). Neither
  /// affects results.
  BatchedEnv(std::size_t num_envs, RngKey seed, std::shared_ptr<WorkerPool> pool,
             std::uint32_t step_work = 0, std::uint32_t step_latency_us = 0)
      : pool_(std::move(pool)),
        step_work_(step_work),
        step_latency_us_(step_latency_us) {
    if (num_envs == 0) throw ConfigError("batched env needs at least one env");
    if (!pool_) throw ConfigError("batched env needs a worker pool");
    states_.reserve(num_envs);
    for (std::size_t i = 0; i < num_envs; ++i)
      states_.push_back(catch_initial_state(fold_in(seed, i)));
    observations_.resize(num_envs * kCatchObsDim);
    rewards_.resize(num_envs, 0.0f);
    dones_.resize(num_envs, 0);
    for (std::size_t i = 0; i < num_envs; ++i)
      catch_observe_into(states_[i], obs_row(i));
  }

  BatchedEnv(std::size_t num_envs, RngKey seed, std::size_t num_workers,
             std::uint32_t step_work = 0, std::uint32_t step_latency_us = 0)
      : BatchedEnv(num_envs, seed, std::make_shared<WorkerPool>(num_workers),
                   step_work, step_latency_us) {}

  std::size_t num_envs() const { return states_.size(); }
  std::size_t obs_dim() const { return kCatchObsDim; }

  /// Current observation batch, [B * obs_dim].
  std::span<const float> observations() const { return observations_; }
  std::span<const float> rewards() const { return rewards_; }
  std::span<const std::uint8_t> dones() const { return dones_; }

  /// Steps every sub-env once with its action; work is spread over the
  /// pool in static contiguous blocks.
  void step(std::span<const std::uint32_t> actions) {
    if (actions.size() != states_.size())
      throw ConfigError("batched env: expected " + std::to_string(states_.size()) +
                        " actions, got " + std::to_string(actions.size()));
    if (step_latency_us_ > 0)
      std::this_thread::sleep_for(std::chrono::microseconds(step_latency_us_));
    pool_->parallel_for(states_.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        if (step_work_ > 0) detail::env_busy_work(step_work_);
        CatchTimeStep ts;
        states_[i] = catch_step(states_[i], actions[i], ts);
        rewards_[i] = ts.reward;
        dones_[i] = ts.done ? 1 : 0;
        catch_observe_into(states_[i], obs_row(i));
      }
    });
  }

 private:
  std::span<float> obs_row(std::size_t i) {
    return {observations_.data() + i * kCatchObsDim, kCatchObsDim};
  }

  std::vector<CatchState> states_;
  std::vector<float> observations_;
  std::vector<float> rewards_;
  std::vector<std::uint8_t> dones_;
  std::shared_ptr<WorkerPool> pool_;
  std::uint32_t step_work_ = 0;
  std::uint32_t step_latency_us_ = 0;
};

}  // namespace podracer
