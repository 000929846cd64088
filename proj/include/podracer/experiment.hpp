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

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "podracer/checkpoint.hpp"
#include "podracer/config.hpp"
#include "podracer/metrics.hpp"
#include "podracer/svg_plot.hpp"

namespace podracer {

struct ExperimentOutcome {
  double throughput = 0.0;  // steps/sec (anakin) or frames/sec (sebulba)
  double final_mean_return = 0.0;
  std::filesystem::path metrics_csv;
  std::filesystem::path checkpoint;
};

/// Runs one configured experiment and writes metrics CSV, final checkpoint,
/// TransferStats JSON and a resolved-config snapshot to output_dir. The
/// snapshot makes the run exactly re-launchable.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);

  MeshConfig mesh_cfg = cfg.mesh_config();
  if (cfg.runtime == "anakin") {
    mesh_cfg.groups["anakin_replicas"] = CoreGroup::range(0, cfg.anakin.num_cores);
  } else {
    for (std::size_t r = 0; r < cfg.sebulba.replicas; ++r) {
      const std::size_t base = r * mesh_cfg.cores_per_host;
      mesh_cfg.groups["replica" + std::to_string(r) + "_actors"] =
          CoreGroup::range(base, cfg.sebulba.actor_cores);
      mesh_cfg.groups["replica" + std::to_string(r) + "_learners"] = CoreGroup::range(
          base + cfg.sebulba.actor_cores, cfg.sebulba.learner_cores);
    }
  }

  {
    std::ofstream out(dir / "resolved_config.json", std::ios::trunc);
    out << cfg.to_json().dump(2) << '\n';
  }

  Mesh mesh(mesh_cfg);
  ExperimentOutcome outcome;
  outcome.metrics_csv = dir / "metrics.csv";
  outcome.checkpoint = dir / "checkpoint.bin";

  if (cfg.runtime == "anakin") {
    AnakinConfig ak = cfg.anakin;
    ak.seed = cfg.seed;
    const AnakinResult result = anakin_train(mesh, ak, cfg.agent);
    write_anakin_csv(outcome.metrics_csv.string(), result.log);
    save_params(outcome.checkpoint.string(), result.final_params);
    outcome.throughput = result.steps_per_sec;
    outcome.final_mean_return =
        result.log.empty() ? 0.0 : result.log.back().mean_return;
  } else {
    SebulbaConfig sb = cfg.sebulba;
    sb.seed = cfg.seed;
    const SebulbaResult result = sebulba_train(mesh, sb, cfg.agent);
    write_sebulba_csv(outcome.metrics_csv.string(), result.log);
    save_params(outcome.checkpoint.string(), result.final_params);
    outcome.throughput = result.frames_per_sec;
    outcome.final_mean_return = result.final_mean_return;
  }

  {
    std::ofstream out(dir / "transfer_stats.json", std::ios::trunc);
    out << mesh.transfer_stats_json().dump(2) << '\n';
  }
  return outcome;
}

// --- sweeps -------------------------------------------------------------

struct SweepSpec {
  std::string axis;  // anakin.num_cores | sebulba.actor_batch |
                     // sebulba.replicas | sebulba.threads_per_actor_core
  std::vector<std::uint64_t> values;
  ExperimentConfig base;
  std::string output_dir = "sweep";
};

struct SweepPoint {
  std::uint64_t value = 0;
  bool ok = false;
  double throughput = 0.0;
  double final_mean_return = 0.0;
  std::string error;
};

struct SweepReport {
  std::string axis;
  std::vector<SweepPoint> points;
  double slope = 0.0;               // least-squares throughput vs axis value
  double scaling_efficiency = 0.0;  // throughput gain relative to ideal linear
  std::filesystem::path csv;
  std::filesystem::path plot;
};

inline SweepSpec load_sweep_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sweep file: " + path);
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
  detail::check_keys(j, "<root>", {"axis", "values", "base", "output_dir"});
  SweepSpec spec;
  detail::read_field(j, "<root>", "axis", spec.axis);
  detail::read_field(j, "<root>", "values", spec.values);
  detail::read_field(j, "<root>", "output_dir", spec.output_dir);
  if (!j.contains("base")) throw ConfigError(path + ": sweep needs a \"base\" config");
  spec.base = experiment_config_from_json(j.at("base"));

  static const std::set<std::string> axes = {
      "anakin.num_cores", "sebulba.actor_batch", "sebulba.replicas",
      "sebulba.threads_per_actor_core"};
  if (!axes.count(spec.axis))
    throw ConfigError(path + ": sweep axis must be one of anakin.num_cores, "
                      "sebulba.actor_batch, sebulba.replicas, "
                      "sebulba.threads_per_actor_core");
  if (spec.values.empty()) throw ConfigError(path + ": sweep values are empty");
  return spec;
}

/// Applies one axis value to a copy of the base config, adjusting the mesh
/// so the point is runnable on its own.
inline ExperimentConfig apply_axis(const SweepSpec& spec, std::uint64_t value) {
  ExperimentConfig cfg = spec.base;
  if (spec.axis == "anakin.num_cores") {
    cfg.runtime = "anakin";
    cfg.anakin.num_cores = value;
    cfg.mesh_num_cores = std::max<std::size_t>(cfg.mesh_num_cores, value);
    if (cfg.mesh_num_cores > cfg.mesh_cores_per_host &&
        cfg.mesh_num_cores % cfg.mesh_cores_per_host != 0)
      cfg.mesh_cores_per_host = cfg.mesh_num_cores;
  } else if (spec.axis == "sebulba.actor_batch") {
    cfg.runtime = "sebulba";
    cfg.sebulba.actor_batch = value;
  } else if (spec.axis == "sebulba.replicas") {
    cfg.runtime = "sebulba";
    cfg.sebulba.replicas = value;
    cfg.mesh_num_cores = value * cfg.mesh_cores_per_host;
  } else if (spec.axis == "sebulba.threads_per_actor_core") {
    cfg.runtime = "sebulba";
    cfg.sebulba.threads_per_actor_core = value;
  }
  return cfg;
}

/// Runs every point (continuing past individual failures), writes the
/// combined CSV, renders the throughput plot from that CSV, and fits the
/// scaling line.
inline SweepReport run_sweep(const SweepSpec& spec) {
  const std::filesystem::path dir(spec.output_dir);
  std::filesystem::create_directories(dir);

  SweepReport report;
  report.axis = spec.axis;
  for (const std::uint64_t value : spec.values) {
    SweepPoint point;
    point.value = value;
    try {
      ExperimentConfig cfg = apply_axis(spec, value);
      cfg.output_dir = (dir / ("point_" + std::to_string(value))).string();
      const ExperimentOutcome outcome = run_experiment(cfg);
      point.ok = true;
      point.throughput = outcome.throughput;
      point.final_mean_return = outcome.final_mean_return;
    } catch (const std::exception& e) {
      point.error = e.what();
    }
    report.points.push_back(std::move(point));
  }

  report.csv = dir / "sweep.csv";
  {
    std::ofstream out(report.csv, std::ios::trunc);
    out << "axis,value,throughput,final_mean_return,status\n";
    for (const auto& p : report.points)
      out << spec.axis << ',' << p.value << ',' << format_double(p.throughput)
          << ',' << format_double(p.final_mean_return) << ','
          << (p.ok ? "ok" : "error") << '\n';
  }

  // plot strictly from the CSV so plots are reproducible offline
  const CsvTable table = read_csv(report.csv.string());
  const auto values = table.column_as_double("value");
  const auto throughputs = table.column_as_double("throughput");
  const std::size_t status_col = table.column_index("status");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    if (table.rows[i][status_col] == "ok")
      pts.push_back({values[i], throughputs[i]});

  if (!pts.empty()) {
    report.plot = dir / "throughput.svg";
    write_line_chart_svg(report.plot.string(), "throughput vs " + spec.axis,
                         spec.axis, "throughput", pts);

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& [x, y] : pts) {
      sx += x;
      sy += y;
      sxx += x * x;
      sxy += x * y;
    }
    const double n = static_cast<double>(pts.size());
    const double denom = n * sxx - sx * sx;
    report.slope = denom != 0 ? (n * sxy - sx * sy) / denom : 0.0;

    std::sort(pts.begin(), pts.end());
    const auto& lo = pts.front();
    const auto& hi = pts.back();
    if (hi.first > lo.first && lo.second > 0)
      report.scaling_efficiency =
          (hi.second / lo.second) / (hi.first / lo.first);
  }

  {
    nlohmann::json j;
    j["axis"] = report.axis;
    j["slope"] = report.slope;
    j["scaling_efficiency"] = report.scaling_efficiency;
    j["points"] = nlohmann::json::array();
    for (const auto& p : report.points)
      j["points"].push_back({{"value", p.value},
                             {"ok", p.ok},
                             {"throughput", p.throughput},
                             {"error", p.error}});
    std::ofstream out(dir / "sweep_report.json", std::ios::trunc);
    out << j.dump(2) << '\n';
  }
  return report;
}

}  // namespace podracer
