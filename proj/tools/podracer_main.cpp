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

#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "podracer/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRuntimeError = 3;

struct RunArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

int run_runtime(const RunArgs& args, const std::string& expected_runtime) {
  podracer::ExperimentConfig cfg = podracer::load_experiment_config(args.config_path);
  if (cfg.runtime != expected_runtime)
    throw podracer::ConfigError(args.config_path + ": config is for runtime \"" +
                                cfg.runtime + "\" but the \"" + expected_runtime +
                                "\" subcommand was invoked");
  if (args.seed) cfg.seed = *args.seed;
  if (args.output_dir) cfg.output_dir = *args.output_dir;
  cfg.validate();

  const podracer::ExperimentOutcome outcome = podracer::run_experiment(cfg);
  std::printf("run complete: throughput %.0f/s, final mean return %.3f\n",
              outcome.throughput, outcome.final_mean_return);
  std::printf("metrics: %s\n", outcome.metrics_csv.string().c_str());
  std::printf("checkpoint: %s\n", outcome.checkpoint.string().c_str());
  return kExitOk;
}

int run_sweep_cmd(const RunArgs& args) {
  podracer::SweepSpec spec = podracer::load_sweep_spec(args.config_path);
  if (args.output_dir) spec.output_dir = *args.output_dir;
  if (args.seed) spec.base.seed = *args.seed;

  const podracer::SweepReport report = podracer::run_sweep(spec);
  std::printf("sweep over %s: %zu points\n", report.axis.c_str(),
              report.points.size());
  for (const auto& p : report.points) {
    if (p.ok)
      std::printf("  %s=%llu  throughput %.0f/s\n", report.axis.c_str(),
                  static_cast<unsigned long long>(p.value), p.throughput);
    else
      std::printf("  %s=%llu  FAILED: %s\n", report.axis.c_str(),
                  static_cast<unsigned long long>(p.value), p.error.c_str());
  }
  std::printf("linear fit slope %.2f, scaling efficiency %.2f\n", report.slope,
              report.scaling_efficiency);
  std::printf("csv: %s\nplot: %s\n", report.csv.string().c_str(),
              report.plot.string().c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"podracer: simulated-mesh runtimes for online and decomposed "
               "actor-learner training"};
  app.require_subcommand(1);

  RunArgs anakin_args, sebulba_args, sweep_args;

  CLI::App* anakin = app.add_subcommand("anakin", "run the fused online runtime");
  anakin->add_option("--config", anakin_args.config_path, "experiment config (JSON)")
      ->required();
  anakin->add_option("--seed", anakin_args.seed, "override the config seed");
  anakin->add_option("--output-dir", anakin_args.output_dir,
                     "override the output directory");

  CLI::App* sebulba =
      app.add_subcommand("sebulba", "run the decomposed actor-learner runtime");
  sebulba->add_option("--config", sebulba_args.config_path, "experiment config (JSON)")
      ->required();
  sebulba->add_option("--seed", sebulba_args.seed, "override the config seed");
  sebulba->add_option("--output-dir", sebulba_args.output_dir,
                      "override the output directory");

  CLI::App* sweep =
      app.add_subcommand("sweep", "run a one-axis scaling sweep and plot it");
  sweep->add_option("--config", sweep_args.config_path, "sweep spec (JSON)")
      ->required();
  sweep->add_option("--seed", sweep_args.seed, "override the base config seed");
  sweep->add_option("--output-dir", sweep_args.output_dir,
                    "override the sweep output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (anakin->parsed()) return run_runtime(anakin_args, "anakin");
    if (sebulba->parsed()) return run_runtime(sebulba_args, "sebulba");
    if (sweep->parsed()) return run_sweep_cmd(sweep_args);
  } catch (const podracer::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return kExitRuntimeError;
  }
  return kExitOk;
}
