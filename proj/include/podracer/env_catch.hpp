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
#include <cstdint>
#include <span>

#include "podracer/common.hpp"
#include "podracer/rng.hpp"
#include "podracer/tensor.hpp"

namespace podracer {

// Catch on a 10x5 grid: a ball falls one row per step from a random top
// column; the paddle on the bottom row moves left/stay/right. The episode
// ends when the ball reaches the bottom row (always exactly 9 steps):
// reward +1 when caught, -1 otherwise, 0 everywhere else.
inline constexpr std::size_t kCatchRows = 10;
inline constexpr std::size_t kCatchCols = 5;
inline constexpr std::size_t kCatchObsDim = kCatchRows * kCatchCols;  // 50
inline constexpr std::size_t kCatchNumActions = 3;  // left, stay, right

/// Environment state is an explicit value; stepping is a pure function of
/// (state, action), including the carried rng key that seeds the next
/// episode on auto-reset.
struct CatchState {
  std::uint32_t ball_row = 0;
  std::uint32_t ball_col = 0;
  std::uint32_t paddle_col = 0;
  RngKey key;

  friend bool operator==(const CatchState&, const CatchState&) = default;
};

/// Packed on-device layout: 7 u32 words per environment slot.
inline constexpr std::size_t kCatchStateWords = 7;

struct CatchTimeStep {
  float reward = 0.0f;
  bool done = false;
};

inline CatchState catch_initial_state(RngKey key) {
  CatchState s;
  s.ball_row = 0;
  s.ball_col = random_below(key, 0, kCatchCols);
  s.paddle_col = kCatchCols / 2;  // column 2
  s.key = key;
  return s;
}

/// Writes the 50-dim one-hot observation (ball cell and paddle cell).
inline void catch_observe_into(const CatchState& s, std::span<float> out) {
  for (std::size_t i = 0; i < kCatchObsDim; ++i) out[i] = 0.0f;
  out[s.ball_row * kCatchCols + s.ball_col] = 1.0f;
  out[(kCatchRows - 1) * kCatchCols + s.paddle_col] = 1.0f;
}

inline Tensor env_observe(const CatchState& s) {
  Tensor obs({kCatchObsDim});
  catch_observe_into(s, obs.data);
  return obs;
}

/// Pure step. On the terminal transition the returned state is already the
/// next episode's initial state (derived from the carried key), so batched
/// rollouts stay rectangular; the terminal reward/done still belong to
/// this step.
inline CatchState catch_step(const CatchState& s, std::uint32_t action,
                             CatchTimeStep& out) {
  if (action >= kCatchNumActions)
    throw ConfigError("catch_step: action must be in {0, 1, 2}");
  CatchState next = s;
  const std::int32_t move = static_cast<std::int32_t>(action) - 1;
  std::int32_t paddle = static_cast<std::int32_t>(s.paddle_col) + move;
  paddle = std::max<std::int32_t>(0, std::min<std::int32_t>(paddle, kCatchCols - 1));
  next.paddle_col = static_cast<std::uint32_t>(paddle);
  next.ball_row = s.ball_row + 1;

  if (next.ball_row == kCatchRows - 1) {
    out.done = true;
    out.reward = (next.paddle_col == next.ball_col) ? 1.0f : -1.0f;
    next = catch_initial_state(fold_in(s.key, 1));
  } else {
    out.done = false;
    out.reward = 0.0f;
  }
  return next;
}

inline void catch_state_pack(const CatchState& s, std::uint32_t* words) {
  words[0] = s.ball_row;
  words[1] = s.ball_col;
  words[2] = s.paddle_col;
  const auto k = key_to_words(s.key);
  for (int i = 0; i < 4; ++i) words[3 + i] = k[i];
}

inline CatchState catch_state_unpack(const std::uint32_t* words) {
  CatchState s;
  s.ball_row = words[0];
  s.ball_col = words[1];
  s.paddle_col = words[2];
  s.key = key_from_words(words + 3);
  return s;
}

}  // namespace podracer
