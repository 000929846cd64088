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

#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "podracer/common.hpp"
#include "podracer/tensor.hpp"

namespace podracer {

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Ordered name -> tensor collection for the network weights. The key set
/// and shapes are fixed after initialization; gradients reuse the same
/// structure shape-for-shape.
struct Params {
  std::vector<NamedTensor> tensors;

  friend bool operator==(const Params&, const Params&) = default;

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.numel();
    return n;
  }

  const Tensor& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw ConfigError("no parameter named '" + name + "'");
  }

  Tensor& at(const std::string& name) {
    for (auto& t : tensors)
      if (t.name == name) return t.value;
    throw ConfigError("no parameter named '" + name + "'");
  }

  bool same_structure(const Params& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].name != other.tensors[i].name ||
          tensors[i].value.shape != other.tensors[i].value.shape)
        return false;
    }
    return true;
  }

  /// Concatenates all tensors into one flat vector (declaration order).
  std::vector<float> flatten() const {
    std::vector<float> flat;
    flat.reserve(numel());
    for (const auto& t : tensors)
      flat.insert(flat.end(), t.value.data.begin(), t.value.data.end());
    return flat;
  }

  /// Inverse of flatten, keeping names/shapes from *this.
  void unflatten(std::span<const float> flat) {
    if (flat.size() != numel())
      throw ConfigError("flat parameter vector has wrong length");
    std::size_t off = 0;
    for (auto& t : tensors) {
      std::memcpy(t.value.data.data(), flat.data() + off,
                  t.value.numel() * sizeof(float));
      off += t.value.numel();
    }
  }

  Params zeros_like() const {
    Params z;
    z.tensors.reserve(tensors.size());
    for (const auto& t : tensors)
      z.tensors.push_back({t.name, Tensor::zeros(t.value.shape)});
    return z;
  }
};

/// Gradients mirror Params shape-for-shape.
using Grads = Params;

/// FNV-1a over the raw f32 bytes; used for cheap cross-core sync checks.
inline std::uint64_t fnv1a64(std::span<const float> xs) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(xs.data());
  for (std::size_t i = 0; i < xs.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t params_hash(const Params& p) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& t : p.tensors) {
    h ^= fnv1a64(t.value.data);
    h *= 1099511628211ull;
  }
  return h;
}

/// Optimizer accumulators; shapes mirror Params.
struct OptimizerState {
  std::uint64_t step_count = 0;
  Params velocity;  // per-parameter momentum accumulator

  static OptimizerState zeros_like(const Params& p) {
    OptimizerState s;
    s.velocity = p.zeros_like();
    return s;
  }
};

}  // namespace podracer
