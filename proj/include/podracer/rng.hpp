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

#include <array>
#include <cstdint>

namespace podracer {

/// Splittable counter-based random key, 128 bits of state.
///
/// Keys are values: folding data into a key yields a statistically
/// independent child key, and drawing from (key, counter) is a pure
/// function. Every parallel entity in the runtimes (core, replica, actor
/// thread, env slot) receives its own key derived by hierarchical folds
/// from the experiment seed, which is what makes parallel runs replayable.
struct RngKey {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  friend bool operator==(const RngKey&, const RngKey&) = default;
};

namespace detail {

// splitmix64 finalizer; full-avalanche 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

constexpr RngKey make_key(std::uint64_t seed) {
  RngKey k;
  k.hi = detail::mix64(seed);
  k.lo = detail::mix64(k.hi ^ 0xda3e39cb94b95bdbull);
  return k;
}

/// Derive an independent child key from (key, data).
constexpr RngKey fold_in(RngKey key, std::uint64_t data) {
  RngKey child;
  child.hi = detail::mix64(key.hi ^ detail::mix64(data ^ 0x5851f42d4c957f2dull));
  child.lo = detail::mix64(key.lo + detail::mix64(data) + child.hi);
  return child;
}

constexpr RngKey fold_in(RngKey key, std::uint64_t a, std::uint64_t b) {
  return fold_in(fold_in(key, a), b);
}

constexpr RngKey fold_in(RngKey key, std::uint64_t a, std::uint64_t b,
                         std::uint64_t c) {
  return fold_in(fold_in(key, a, b), c);
}

constexpr std::array<RngKey, 2> split(RngKey key) {
  return {fold_in(key, 0), fold_in(key, 1)};
}

/// Pure draw: the stream position is the explicit counter.
constexpr std::uint64_t random_u64(RngKey key, std::uint64_t counter = 0) {
  return detail::mix64(key.lo ^ detail::mix64(key.hi ^ detail::mix64(counter)));
}

constexpr std::uint32_t random_u32(RngKey key, std::uint64_t counter = 0) {
  return static_cast<std::uint32_t>(random_u64(key, counter) >> 32);
}

/// Uniform integer in [0, n). Fixed-point multiply keeps the bias below
/// 2^-32 for the small n used here.
constexpr std::uint32_t random_below(RngKey key, std::uint64_t counter,
                                     std::uint32_t n) {
  const std::uint64_t r = random_u64(key, counter) >> 32;
  return static_cast<std::uint32_t>((r * n) >> 32);
}

/// Uniform float in [0, 1), 24 bits of mantissa.
constexpr float random_unit_float(RngKey key, std::uint64_t counter = 0) {
  const std::uint32_t bits = static_cast<std::uint32_t>(
      random_u64(key, counter) >> 40);  // 24 bits
  return static_cast<float>(bits) * (1.0f / 16777216.0f);
}

/// Uniform float in [-r, r).
constexpr float random_symmetric_float(RngKey key, std::uint64_t counter,
                                       float r) {
  return (2.0f * random_unit_float(key, counter) - 1.0f) * r;
}

inline std::array<std::uint32_t, 4> key_to_words(RngKey key) {
  return {static_cast<std::uint32_t>(key.hi),
          static_cast<std::uint32_t>(key.hi >> 32),
          static_cast<std::uint32_t>(key.lo),
          static_cast<std::uint32_t>(key.lo >> 32)};
}

inline RngKey key_from_words(const std::uint32_t* w) {
  RngKey k;
  k.hi = static_cast<std::uint64_t>(w[0]) |
         (static_cast<std::uint64_t>(w[1]) << 32);
  k.lo = static_cast<std::uint64_t>(w[2]) |
         (static_cast<std::uint64_t>(w[3]) << 32);
  return k;
}

}  // namespace podracer
