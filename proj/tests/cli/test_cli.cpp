// Drives the installed CLI binary end to end: exit codes, artifacts,
// determinism of repeated runs. The binary path comes from CMake.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef PODRACER_CLI_PATH
#error "PODRACER_CLI_PATH must be defined"
#endif

namespace fs = std::filesystem;

namespace {

int failures = 0;

void expect(bool ok, const std::string& what) {
  if (!ok) {
    std::printf("FAILED: %s\n", what.c_str());
    ++failures;
  }
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PODRACER_CLI_PATH) + " " + args +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "podracer_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  write_file(dir / "anakin.json", R"({
    "runtime": "anakin",
    "seed": 5,
    "output_dir": ")" + (dir / "out").string() + R"(",
    "mesh": {"num_cores": 2},
    "agent": {"hidden_dim": 16, "learning_rate": 0.05},
    "anakin": {"num_cores": 2, "batch_per_core": 4, "unroll_length": 8,
               "total_steps": 1024, "log_interval": 4}
  })");

  // success path: exit 0 plus the full artifact set
  expect(run_cli("anakin --config " + (dir / "anakin.json").string()) == 0,
         "valid anakin config exits 0");
  expect(fs::exists(dir / "out" / "metrics.csv"), "metrics.csv written");
  expect(fs::exists(dir / "out" / "checkpoint.bin"), "checkpoint.bin written");
  expect(fs::exists(dir / "out" / "transfer_stats.json"), "transfer stats written");
  expect(fs::exists(dir / "out" / "resolved_config.json"), "resolved config written");

  // identical reruns give identical checkpoints
  expect(run_cli("anakin --config " + (dir / "anakin.json").string() +
                 " --output-dir " + (dir / "out2").string()) == 0,
         "rerun exits 0");
  expect(read_file(dir / "out" / "checkpoint.bin") ==
             read_file(dir / "out2" / "checkpoint.bin"),
         "reruns produce byte-identical checkpoints");

  // config errors: exit 2
  expect(run_cli("anakin --config " + (dir / "missing.json").string()) == 2,
         "missing config exits 2");
  write_file(dir / "bad.json", R"({"runtime": "anakin", "bogus": 1})");
  expect(run_cli("anakin --config " + (dir / "bad.json").string()) == 2,
         "unknown key exits 2");
  expect(run_cli("sebulba --config " + (dir / "anakin.json").string()) == 2,
         "runtime/subcommand mismatch exits 2");
  write_file(dir / "invalid.json", R"({
    "runtime": "sebulba",
    "sebulba": {"actor_cores": 4, "learner_cores": 6, "actor_batch": 6,
                "trajectory_length": 4, "total_frames": 64}
  })");
  expect(run_cli("sebulba --config " + (dir / "invalid.json").string()) == 2,
         "constraint violation exits 2");

  // runtime errors: exit 3
  write_file(dir / "unwritable.json", R"({
    "runtime": "anakin",
    "output_dir": "/proc/cannot_write_here/out",
    "mesh": {"num_cores": 1},
    "anakin": {"num_cores": 1, "batch_per_core": 2, "unroll_length": 4,
               "total_steps": 8}
  })");
  expect(run_cli("anakin --config " + (dir / "unwritable.json").string()) == 3,
         "unwritable output dir exits 3");

  // sweep: combined csv + plot
  write_file(dir / "sweep.json", R"({
    "axis": "anakin.num_cores",
    "values": [1, 2],
    "output_dir": ")" + (dir / "sweep_out").string() + R"(",
    "base": {
      "runtime": "anakin",
      "seed": 5,
      "mesh": {"num_cores": 2},
      "agent": {"hidden_dim": 16},
      "anakin": {"num_cores": 2, "batch_per_core": 4, "unroll_length": 8,
                 "total_steps": 1024, "log_interval": 4}
    }
  })");
  expect(run_cli("sweep --config " + (dir / "sweep.json").string()) == 0,
         "sweep exits 0");
  expect(fs::exists(dir / "sweep_out" / "sweep.csv"), "sweep csv written");
  expect(fs::exists(dir / "sweep_out" / "throughput.svg"), "sweep plot written");
  expect(fs::exists(dir / "sweep_out" / "sweep_report.json"), "sweep report written");

  fs::remove_all(dir);
  if (failures == 0) {
    std::printf("cli checks passed\n");
    return 0;
  }
  std::printf("%d cli check(s) failed\n", failures);
  return 1;
}
