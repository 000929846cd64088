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
#include <stdexcept>
#include <string>

namespace podracer {

/// Raised for malformed configuration (bad mesh topology, bad experiment
/// config, invalid operation arguments). The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Base class for simulated-device failures. The CLI maps this (and any
/// other runtime failure) to exit code 3.
class MeshError : public std::runtime_error {
 public:
  explicit MeshError(const std::string& what) : std::runtime_error(what) {}
};

/// A program touched a buffer resident on a different core. The device
/// model forbids that: data has to move via device_transfer or a collective.
class OwnershipError : public MeshError {
 public:
  explicit OwnershipError(const std::string& what) : MeshError(what) {}
};

/// A collective rendezvous did not complete within the configured timeout.
/// The message names the cores that never contributed.
class CollectiveTimeoutError : public MeshError {
 public:
  explicit CollectiveTimeoutError(const std::string& what) : MeshError(what) {}
};

}  // namespace podracer
