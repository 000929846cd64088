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

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "podracer/common.hpp"
#include "podracer/rng.hpp"

namespace podracer {

inline std::size_t shape_numel(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

/// Dense row-major f32 tensor. Deliberately minimal: the runtimes work on
/// flat spans and the shape is bookkeeping.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
  Tensor(std::vector<std::size_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw ConfigError("tensor data size does not match shape");
  }

  std::size_t numel() const { return data.size(); }
  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::size_t> s, float v) {
    Tensor t(std::move(s));
    for (float& x : t.data) x = v;
    return t;
  }

  static Tensor uniform(std::vector<std::size_t> s, RngKey key, float radius) {
    Tensor t(std::move(s));
    for (std::size_t i = 0; i < t.data.size(); ++i)
      t.data[i] = random_symmetric_float(key, i, radius);
    return t;
  }
};

inline bool all_finite(std::span<const float> xs) {
  for (float x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

/// Pairwise reduction over [0, n) with a fixed recursive-halving tree
/// (split at n/2, contiguous halves). Every float reduction in the project
/// that has to be reproducible across different parallel decompositions —
/// gradient accumulation over the batch, the cross-core collectives — uses
/// this one tree shape. For power-of-two sizes the tree over 4k leaves
/// decomposes exactly into four subtrees over k leaves, which is what makes
/// "n replicas of batch k" bit-equal to "one replica of batch nk".
template <typename Acc, typename Leaf, typename Combine>
Acc tree_reduce(std::size_t lo, std::size_t n, const Leaf& leaf,
                const Combine& combine) {
  assert(n > 0);
  if (n == 1) return leaf(lo);
  const std::size_t h = n / 2;
  Acc left = tree_reduce<Acc>(lo, h, leaf, combine);
  Acc right = tree_reduce<Acc>(lo + h, n - h, leaf, combine);
  return combine(std::move(left), std::move(right));
}

/// Scalar tree sum over a span, same tree shape as tree_reduce.
inline float tree_sum(std::span<const float> xs) {
  return tree_reduce<float>(
      0, xs.size(), [&](std::size_t i) { return xs[i]; },
      [](float a, float b) { return a + b; });
}

/// Elementwise tree sum of n vectors of equal length, where leaf(i) gives a
/// view of the i-th vector. Result has the same length.
inline std::vector<float> tree_sum_vectors(
    std::size_t n, const std::function<std::span<const float>(std::size_t)>& leaf) {
  std::vector<float> acc = tree_reduce<std::vector<float>>(
      0, n,
      [&](std::size_t i) {
        auto v = leaf(i);
        return std::vector<float>(v.begin(), v.end());
      },
      [](std::vector<float> a, std::vector<float> b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
        return a;
      });
  return acc;
}

}  // namespace podracer
