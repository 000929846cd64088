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

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "podracer/agent.hpp"
#include "podracer/anakin.hpp"
#include "podracer/common.hpp"
#include "podracer/mesh.hpp"
#include "podracer/sebulba.hpp"

namespace podracer {

/// One experiment: which runtime, on what mesh, with which agent and
/// runtime block. Parsed strictly from a JSON file: unknown keys are
/// rejected, errors carry the file and line.
struct ExperimentConfig {
  std::string runtime;  // "anakin" | "sebulba"
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  std::size_t mesh_num_cores = 8;
  std::size_t mesh_cores_per_host = 8;
  std::uint64_t collective_timeout_ms = 30000;
  AgentConfig agent;
  AnakinConfig anakin;
  SebulbaConfig sebulba;

  void validate() const {
    if (runtime != "anakin" && runtime != "sebulba")
      throw ConfigError("runtime must be \"anakin\" or \"sebulba\", got \"" +
                        runtime + "\"");
    agent.validate();
    MeshConfig mc = mesh_config();
    mc.validate();
    if (runtime == "anakin")
      anakin.validate(mesh_num_cores);
    else
      sebulba.validate(mc);
  }

  MeshConfig mesh_config() const {
    MeshConfig mc;
    mc.num_cores = mesh_num_cores;
    mc.cores_per_host = mesh_cores_per_host;
    mc.collective_timeout = std::chrono::milliseconds(collective_timeout_ms);
    return mc;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["runtime"] = runtime;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["mesh"] = {{"num_cores", mesh_num_cores},
                 {"cores_per_host", mesh_cores_per_host},
                 {"collective_timeout_ms", collective_timeout_ms}};
    j["agent"] = {{"discount", agent.discount},
                  {"entropy_cost", agent.entropy_cost},
                  {"value_cost", agent.value_cost},
                  {"rho_clip", agent.rho_clip},
                  {"learning_rate", agent.learning_rate},
                  {"momentum", agent.momentum},
                  {"hidden_dim", agent.hidden_dim}};
    if (runtime == "anakin")
      j["anakin"] = {{"num_cores", anakin.num_cores},
                     {"batch_per_core", anakin.batch_per_core},
                     {"unroll_length", anakin.unroll_length},
                     {"total_steps", anakin.total_steps},
                     {"log_interval", anakin.log_interval}};
    else
      j["sebulba"] = {{"actor_cores", sebulba.actor_cores},
                      {"learner_cores", sebulba.learner_cores},
                      {"threads_per_actor_core", sebulba.threads_per_actor_core},
                      {"actor_batch", sebulba.actor_batch},
                      {"trajectory_length", sebulba.trajectory_length},
                      {"queue_capacity", sebulba.queue_capacity},
                      {"replicas", sebulba.replicas},
                      {"total_frames", sebulba.total_frames},
                      {"env_workers", sebulba.env_workers},
                      {"env_step_work", sebulba.env_step_work},
                      {"env_step_latency_us", sebulba.env_step_latency_us},
                      {"split_updates", sebulba.split_updates},
                      {"log_interval", sebulba.log_interval},
                      {"injected_learner_delay_ms", sebulba.injected_learner_delay_ms}};
    return j;
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& where,
                       const std::set<std::string>& known) {
  for (const auto& [key, value] : obj.items())
    if (!known.count(key))
      throw ConfigError("unknown key \"" + key + "\" in \"" + where + "\"");
}

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& where,
                const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad value for \"" + where + "." + key + "\": " + e.what());
  }
}

inline std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  detail::check_keys(j, "<root>",
                     {"runtime", "seed", "output_dir", "mesh", "agent", "anakin",
                      "sebulba"});
  detail::read_field(j, "<root>", "runtime", cfg.runtime);
  detail::read_field(j, "<root>", "seed", cfg.seed);
  detail::read_field(j, "<root>", "output_dir", cfg.output_dir);

  if (j.contains("mesh")) {
    const auto& m = j.at("mesh");
    detail::check_keys(m, "mesh",
                       {"num_cores", "cores_per_host", "collective_timeout_ms"});
    detail::read_field(m, "mesh", "num_cores", cfg.mesh_num_cores);
    detail::read_field(m, "mesh", "cores_per_host", cfg.mesh_cores_per_host);
    detail::read_field(m, "mesh", "collective_timeout_ms", cfg.collective_timeout_ms);
  }
  if (j.contains("agent")) {
    const auto& a = j.at("agent");
    detail::check_keys(a, "agent",
                       {"discount", "entropy_cost", "value_cost", "rho_clip",
                        "learning_rate", "momentum", "hidden_dim"});
    detail::read_field(a, "agent", "discount", cfg.agent.discount);
    detail::read_field(a, "agent", "entropy_cost", cfg.agent.entropy_cost);
    detail::read_field(a, "agent", "value_cost", cfg.agent.value_cost);
    detail::read_field(a, "agent", "rho_clip", cfg.agent.rho_clip);
    detail::read_field(a, "agent", "learning_rate", cfg.agent.learning_rate);
    detail::read_field(a, "agent", "momentum", cfg.agent.momentum);
    detail::read_field(a, "agent", "hidden_dim", cfg.agent.hidden_dim);
  }
  if (j.contains("anakin")) {
    const auto& a = j.at("anakin");
    detail::check_keys(a, "anakin",
                       {"num_cores", "batch_per_core", "unroll_length",
                        "total_steps", "log_interval"});
    detail::read_field(a, "anakin", "num_cores", cfg.anakin.num_cores);
    detail::read_field(a, "anakin", "batch_per_core", cfg.anakin.batch_per_core);
    detail::read_field(a, "anakin", "unroll_length", cfg.anakin.unroll_length);
    detail::read_field(a, "anakin", "total_steps", cfg.anakin.total_steps);
    detail::read_field(a, "anakin", "log_interval", cfg.anakin.log_interval);
  }
  if (j.contains("sebulba")) {
    const auto& s = j.at("sebulba");
    detail::check_keys(
        s, "sebulba",
        {"actor_cores", "learner_cores", "threads_per_actor_core", "actor_batch",
         "trajectory_length", "queue_capacity", "replicas", "total_frames",
         "env_workers", "env_step_work", "env_step_latency_us", "split_updates",
         "log_interval", "injected_learner_delay_ms"});
    detail::read_field(s, "sebulba", "actor_cores", cfg.sebulba.actor_cores);
    detail::read_field(s, "sebulba", "learner_cores", cfg.sebulba.learner_cores);
    detail::read_field(s, "sebulba", "threads_per_actor_core",
                       cfg.sebulba.threads_per_actor_core);
    detail::read_field(s, "sebulba", "actor_batch", cfg.sebulba.actor_batch);
    detail::read_field(s, "sebulba", "trajectory_length",
                       cfg.sebulba.trajectory_length);
    detail::read_field(s, "sebulba", "queue_capacity", cfg.sebulba.queue_capacity);
    detail::read_field(s, "sebulba", "replicas", cfg.sebulba.replicas);
    detail::read_field(s, "sebulba", "total_frames", cfg.sebulba.total_frames);
    detail::read_field(s, "sebulba", "env_workers", cfg.sebulba.env_workers);
    detail::read_field(s, "sebulba", "env_step_work", cfg.sebulba.env_step_work);
    detail::read_field(s, "sebulba", "env_step_latency_us",
                       cfg.sebulba.env_step_latency_us);
    detail::read_field(s, "sebulba", "split_updates", cfg.sebulba.split_updates);
    detail::read_field(s, "sebulba", "log_interval", cfg.sebulba.log_interval);
    detail::read_field(s, "sebulba", "injected_learner_delay_ms",
                       cfg.sebulba.injected_learner_delay_ms);
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ":" + std::to_string(detail::line_of_byte(text, e.byte)) +
                      ": " + e.what());
  }
  try {
    ExperimentConfig cfg = experiment_config_from_json(j);
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace podracer
