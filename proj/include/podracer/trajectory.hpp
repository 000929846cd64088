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

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "podracer/checkpoint.hpp"
#include "podracer/common.hpp"

namespace podracer {

/// Fixed-length batch of transitions, time-major [T, B, ...]. This is the
/// unit of actor-to-learner data flow. behavior_logits are the logits the
/// acting policy produced at selection time; they back the off-policy
/// correction when the learner's parameters have moved on.
struct Trajectory {
  std::size_t unroll_len = 0;   // T
  std::size_t batch = 0;        // B
  std::size_t obs_dim = 0;
  std::size_t num_actions = 0;

  std::vector<float> observations;       // [T*B*obs_dim]
  std::vector<std::uint32_t> actions;    // [T*B]
  std::vector<float> behavior_logits;    // [T*B*num_actions]
  std::vector<float> rewards;            // [T*B]
  std::vector<std::uint8_t> dones;       // [T*B]
  std::vector<float> bootstrap_observation;  // [B*obs_dim]

  friend bool operator==(const Trajectory&, const Trajectory&) = default;

  static Trajectory make(std::size_t t, std::size_t b, std::size_t obs,
                         std::size_t actions_n) {
    Trajectory tr;
    tr.unroll_len = t;
    tr.batch = b;
    tr.obs_dim = obs;
    tr.num_actions = actions_n;
    tr.observations.resize(t * b * obs, 0.0f);
    tr.actions.resize(t * b, 0);
    tr.behavior_logits.resize(t * b * actions_n, 0.0f);
    tr.rewards.resize(t * b, 0.0f);
    tr.dones.resize(t * b, 0);
    tr.bootstrap_observation.resize(b * obs, 0.0f);
    return tr;
  }

  void validate() const {
    const std::size_t n = unroll_len * batch;
    if (observations.size() != n * obs_dim || actions.size() != n ||
        behavior_logits.size() != n * num_actions || rewards.size() != n ||
        dones.size() != n || bootstrap_observation.size() != batch * obs_dim)
      throw ConfigError("trajectory field sizes are inconsistent");
  }
};

/// Copies batch slots [slot_begin, slot_begin + width) into a new
/// trajectory; the time axis is untouched.
inline Trajectory trajectory_batch_slice(const Trajectory& t, std::size_t slot_begin,
                                         std::size_t width) {
  if (slot_begin + width > t.batch)
    throw ConfigError("trajectory slice out of range");
  Trajectory out = Trajectory::make(t.unroll_len, width, t.obs_dim, t.num_actions);
  for (std::size_t step = 0; step < t.unroll_len; ++step) {
    const std::size_t src = step * t.batch + slot_begin;
    const std::size_t dst = step * width;
    std::memcpy(out.observations.data() + dst * t.obs_dim,
                t.observations.data() + src * t.obs_dim,
                width * t.obs_dim * sizeof(float));
    std::memcpy(out.actions.data() + dst, t.actions.data() + src,
                width * sizeof(std::uint32_t));
    std::memcpy(out.behavior_logits.data() + dst * t.num_actions,
                t.behavior_logits.data() + src * t.num_actions,
                width * t.num_actions * sizeof(float));
    std::memcpy(out.rewards.data() + dst, t.rewards.data() + src,
                width * sizeof(float));
    std::memcpy(out.dones.data() + dst, t.dones.data() + src, width);
  }
  std::memcpy(out.bootstrap_observation.data(),
              t.bootstrap_observation.data() + slot_begin * t.obs_dim,
              width * t.obs_dim * sizeof(float));
  return out;
}

/// Splits along the batch dimension into `pieces` contiguous shards.
inline std::vector<Trajectory> trajectory_shard(const Trajectory& t,
                                                std::size_t pieces) {
  if (pieces == 0 || t.batch % pieces != 0)
    throw ConfigError("trajectory batch " + std::to_string(t.batch) +
                      " is not divisible into " + std::to_string(pieces) + " shards");
  const std::size_t width = t.batch / pieces;
  std::vector<Trajectory> shards;
  shards.reserve(pieces);
  for (std::size_t i = 0; i < pieces; ++i)
    shards.push_back(trajectory_batch_slice(t, i * width, width));
  return shards;
}

/// Inverse of trajectory_shard: concatenation along the batch dimension.
inline Trajectory trajectory_concat(const std::vector<Trajectory>& shards) {
  if (shards.empty()) throw ConfigError("cannot concatenate zero shards");
  std::size_t batch = 0;
  for (const auto& s : shards) {
    if (s.unroll_len != shards[0].unroll_len || s.obs_dim != shards[0].obs_dim ||
        s.num_actions != shards[0].num_actions)
      throw ConfigError("shards disagree on shape");
    batch += s.batch;
  }
  Trajectory out = Trajectory::make(shards[0].unroll_len, batch, shards[0].obs_dim,
                                    shards[0].num_actions);
  std::size_t slot = 0;
  for (const auto& s : shards) {
    for (std::size_t step = 0; step < s.unroll_len; ++step) {
      const std::size_t src = step * s.batch;
      const std::size_t dst = step * batch + slot;
      std::memcpy(out.observations.data() + dst * s.obs_dim,
                  s.observations.data() + src * s.obs_dim,
                  s.batch * s.obs_dim * sizeof(float));
      std::memcpy(out.actions.data() + dst, s.actions.data() + src,
                  s.batch * sizeof(std::uint32_t));
      std::memcpy(out.behavior_logits.data() + dst * s.num_actions,
                  s.behavior_logits.data() + src * s.num_actions,
                  s.batch * s.num_actions * sizeof(float));
      std::memcpy(out.rewards.data() + dst, s.rewards.data() + src,
                  s.batch * sizeof(float));
      std::memcpy(out.dones.data() + dst, s.dones.data() + src, s.batch);
    }
    std::memcpy(out.bootstrap_observation.data() + slot * s.obs_dim,
                s.bootstrap_observation.data(), s.batch * s.obs_dim * sizeof(float));
    slot += s.batch;
  }
  return out;
}

/// Debug dump in the checkpoint container format (u32 tensors for the
/// integer fields).
inline void dump_trajectory(const std::string& path, const Trajectory& t) {
  t.validate();
  const std::size_t T = t.unroll_len, B = t.batch;
  std::vector<CheckpointEntry> entries;
  auto f32 = [&](const char* name, std::vector<std::size_t> shape,
                 const std::vector<float>& data) {
    entries.push_back({name, "f32", std::move(shape), data, {}});
  };
  f32("observations", {T, B, t.obs_dim}, t.observations);
  entries.push_back({"actions", "u32", {T, B}, {}, t.actions});
  f32("behavior_logits", {T, B, t.num_actions}, t.behavior_logits);
  f32("rewards", {T, B}, t.rewards);
  std::vector<std::uint32_t> dones(t.dones.begin(), t.dones.end());
  entries.push_back({"dones", "u32", {T, B}, {}, std::move(dones)});
  f32("bootstrap_observation", {B, t.obs_dim}, t.bootstrap_observation);
  write_checkpoint(path, entries);
}

}  // namespace podracer
