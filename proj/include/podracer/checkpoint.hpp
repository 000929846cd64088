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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "podracer/common.hpp"
#include "podracer/params.hpp"

namespace podracer {

// Checkpoint layout: one JSON header line ('\n'-terminated) listing
// name/dtype/shape/byte-offset per tensor, followed by the raw
// little-endian payload. Params are all f32; trajectory dumps reuse the
// format with u32 tensors for actions/dones.

struct CheckpointEntry {
  std::string name;
  std::string dtype;  // "f32" | "u32"
  std::vector<std::size_t> shape;
  std::vector<float> f32;
  std::vector<std::uint32_t> u32;
};

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline void write_checkpoint(const std::string& path,
                             const std::vector<CheckpointEntry>& entries) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& e : entries) {
    const std::size_t n = e.dtype == "f32" ? e.f32.size() : e.u32.size();
    header["tensors"].push_back({{"name", e.name},
                                 {"dtype", e.dtype},
                                 {"shape", e.shape},
                                 {"offset", offset}});
    offset += n * 4;
  }
  header["data_bytes"] = offset;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open checkpoint file for writing: " + path);
  out << header.dump() << '\n';
  for (const auto& e : entries) {
    if (e.dtype == "f32")
      out.write(reinterpret_cast<const char*>(e.f32.data()),
                static_cast<std::streamsize>(e.f32.size() * 4));
    else
      out.write(reinterpret_cast<const char*>(e.u32.data()),
                static_cast<std::streamsize>(e.u32.size() * 4));
  }
  if (!out) throw ConfigError("short write on checkpoint file: " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint file: " + path);
  std::string header_line;
  if (!std::getline(in, header_line))
    throw ConfigError("checkpoint missing header line: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);

  std::vector<char> blob(header.at("data_bytes").get<std::size_t>());
  in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (static_cast<std::size_t>(in.gcount()) != blob.size())
    throw ConfigError("checkpoint payload truncated: " + path);

  std::vector<CheckpointEntry> entries;
  for (const auto& t : header.at("tensors")) {
    CheckpointEntry e;
    e.name = t.at("name").get<std::string>();
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<std::vector<std::size_t>>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t n = shape_numel(e.shape);
    if (offset + n * 4 > blob.size())
      throw ConfigError("checkpoint entry out of bounds: " + e.name);
    if (e.dtype == "f32") {
      e.f32.resize(n);
      std::memcpy(e.f32.data(), blob.data() + offset, n * 4);
    } else if (e.dtype == "u32") {
      e.u32.resize(n);
      std::memcpy(e.u32.data(), blob.data() + offset, n * 4);
    } else {
      throw ConfigError("checkpoint entry has unknown dtype: " + e.dtype);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void save_params(const std::string& path, const Params& params) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    CheckpointEntry e;
    e.name = t.name;
    e.dtype = "f32";
    e.shape = t.value.shape;
    e.f32 = t.value.data;
    entries.push_back(std::move(e));
  }
  write_checkpoint(path, entries);
}

inline Params load_params(const std::string& path) {
  Params p;
  for (auto& e : read_checkpoint(path)) {
    if (e.dtype != "f32")
      throw ConfigError("parameter checkpoint contains non-f32 tensor: " + e.name);
    p.tensors.push_back({e.name, Tensor(e.shape, std::move(e.f32))});
  }
  return p;
}

}  // namespace podracer
