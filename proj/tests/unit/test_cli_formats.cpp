#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "podracer/experiment.hpp"

using namespace podracer;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("podracer_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
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

// tiny but complete anakin experiment
ExperimentConfig tiny_anakin(const fs::path& out_dir, std::uint64_t seed = 3) {
  ExperimentConfig cfg;
  cfg.runtime = "anakin";
  cfg.seed = seed;
  cfg.output_dir = out_dir.string();
  cfg.mesh_num_cores = 2;
  cfg.agent.hidden_dim = 16;
  cfg.agent.learning_rate = 0.02f;
  cfg.anakin.num_cores = 2;
  cfg.anakin.batch_per_core = 4;
  cfg.anakin.unroll_length = 8;
  cfg.anakin.total_steps = 2 * 4 * 8 * 5;
  cfg.anakin.log_interval = 2;
  return cfg;
}

// CSV comparison that ignores the wall-clock column
std::string strip_timing_column(const std::string& csv, const std::string& column) {
  std::stringstream in(csv);
  std::string line, out;
  std::size_t drop = std::string::npos;
  bool header = true;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) drop = i;
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == drop) continue;
      out += cells[i];
      out += ',';
    }
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("experiment config round-trips through json with strict keys") {
  const fs::path dir = temp_dir("config");
  write_file(dir / "good.json", R"({
    "runtime": "anakin",
    "seed": 7,
    "output_dir": "out",
    "mesh": {"num_cores": 4},
    "agent": {"hidden_dim": 16, "learning_rate": 0.01},
    "anakin": {"num_cores": 4, "batch_per_core": 8, "unroll_length": 16,
               "total_steps": 4096}
  })");
  const ExperimentConfig cfg = load_experiment_config((dir / "good.json").string());
  CHECK(cfg.runtime == "anakin");
  CHECK(cfg.seed == 7);
  CHECK(cfg.anakin.batch_per_core == 8);
  CHECK(cfg.agent.hidden_dim == 16);

  write_file(dir / "unknown.json", R"({
    "runtime": "anakin",
    "anakin": {"num_cores": 1, "batch_per_core": 1, "unroll_length": 1,
               "total_steps": 1, "typo_key": 5}
  })");
  try {
    load_experiment_config((dir / "unknown.json").string());
    FAIL("expected rejection of unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
  }

  write_file(dir / "broken.json", "{\n  \"runtime\": \"anakin\",\n  !!!\n}\n");
  try {
    load_experiment_config((dir / "broken.json").string());
    FAIL("expected parse error");
  } catch (const ConfigError& e) {
    // line-anchored message
    CHECK(std::string(e.what()).find("broken.json:3") != std::string::npos);
  }

  write_file(dir / "invalid.json", R"({
    "runtime": "sebulba",
    "sebulba": {"actor_cores": 3, "learner_cores": 6, "actor_batch": 6,
                "trajectory_length": 4, "total_frames": 100}
  })");
  try {
    load_experiment_config((dir / "invalid.json").string());
    FAIL("expected constraint violation");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("cores_per_host") != std::string::npos);
  }
}

TEST_CASE("run_experiment writes all artifacts and is deterministic") {
  const fs::path d1 = temp_dir("run1");
  const fs::path d2 = temp_dir("run2");

  const ExperimentOutcome o1 = run_experiment(tiny_anakin(d1));
  const ExperimentOutcome o2 = run_experiment(tiny_anakin(d2));

  for (const auto& dir : {d1, d2}) {
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "checkpoint.bin"));
    CHECK(fs::exists(dir / "transfer_stats.json"));
    CHECK(fs::exists(dir / "resolved_config.json"));
  }

  // identical checkpoints, byte for byte
  CHECK(read_file(d1 / "checkpoint.bin") == read_file(d2 / "checkpoint.bin"));
  // identical metrics modulo the wall-clock column
  CHECK(strip_timing_column(read_file(d1 / "metrics.csv"), "steps_per_sec") ==
        strip_timing_column(read_file(d2 / "metrics.csv"), "steps_per_sec"));
  CHECK(o1.final_mean_return == o2.final_mean_return);

  // the anakin data plane stays off the host after initialization: the
  // stats dump shows identical h2d on both runs
  const auto stats = nlohmann::json::parse(read_file(d1 / "transfer_stats.json"));
  CHECK(stats.at("0").at("h2d_bytes").get<std::uint64_t>() > 0);  // init only
  CHECK(stats.at("0").at("collectives").get<std::uint64_t>() > 0);

  // resolved config snapshot is itself a loadable config
  const ExperimentConfig resolved = [&] {
    ExperimentConfig c =
        experiment_config_from_json(nlohmann::json::parse(read_file(d1 / "resolved_config.json")));
    return c;
  }();
  CHECK(resolved.anakin.total_steps == tiny_anakin(d1).anakin.total_steps);

  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("runtime mismatch between config and subcommand is a config error") {
  // exercised through the library surface the CLI uses
  const fs::path dir = temp_dir("mismatch");
  ExperimentConfig cfg = tiny_anakin(dir);
  cfg.runtime = "neither";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("sweeps run every point, emit csv + svg, and fit a slope") {
  const fs::path dir = temp_dir("sweep");
  SweepSpec spec;
  spec.axis = "anakin.num_cores";
  spec.values = {1, 2};
  spec.base = tiny_anakin(dir / "base");
  spec.output_dir = (dir / "sweep_out").string();

  const SweepReport report = run_sweep(spec);
  REQUIRE(report.points.size() == 2);
  CHECK(report.points[0].ok);
  CHECK(report.points[1].ok);
  CHECK(fs::exists(report.csv));
  CHECK(fs::exists(report.plot));
  CHECK(fs::exists(dir / "sweep_out" / "sweep_report.json"));
  CHECK(fs::exists(dir / "sweep_out" / "point_1" / "metrics.csv"));
  CHECK(fs::exists(dir / "sweep_out" / "point_2" / "metrics.csv"));

  const CsvTable table = read_csv(report.csv.string());
  CHECK(table.columns ==
        std::vector<std::string>{"axis", "value", "throughput",
                                 "final_mean_return", "status"});
  CHECK(table.rows.size() == 2);

  // a point that cannot run is reported and does not abort the sweep
  SweepSpec bad = spec;
  bad.values = {1, 0};  // zero cores is invalid
  bad.output_dir = (dir / "sweep_bad").string();
  const SweepReport bad_report = run_sweep(bad);
  REQUIRE(bad_report.points.size() == 2);
  CHECK(bad_report.points[0].ok);
  CHECK_FALSE(bad_report.points[1].ok);
  CHECK(!bad_report.points[1].error.empty());

  fs::remove_all(dir);
}

TEST_CASE("empty sweeps are rejected") {
  const fs::path dir = temp_dir("sweep_empty");
  write_file(dir / "sweep.json", R"({
    "axis": "anakin.num_cores",
    "values": [],
    "base": {"runtime": "anakin",
             "anakin": {"num_cores": 1, "batch_per_core": 1, "unroll_length": 1,
                        "total_steps": 8}}
  })");
  CHECK_THROWS_AS(load_sweep_spec((dir / "sweep.json").string()), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("trajectory debug dumps use the checkpoint container") {
  const fs::path dir = temp_dir("trajdump");
  Trajectory t = Trajectory::make(3, 2, kCatchObsDim, kCatchNumActions);
  for (std::size_t i = 0; i < t.observations.size(); ++i)
    t.observations[i] = static_cast<float>(i) * 0.25f;
  t.actions = {0, 1, 2, 0, 1, 2};
  t.rewards = {0, 0, 0, 0, 1, -1};
  t.dones = {0, 0, 0, 0, 1, 1};
  const fs::path path = dir / "traj.bin";
  dump_trajectory(path.string(), t);

  const auto entries = read_checkpoint(path.string());
  REQUIRE(entries.size() == 6);
  CHECK(entries[0].name == "observations");
  CHECK(entries[0].shape == std::vector<std::size_t>{3, 2, kCatchObsDim});
  CHECK(entries[0].f32 == t.observations);
  CHECK(entries[1].name == "actions");
  CHECK(entries[1].dtype == "u32");
  CHECK(entries[1].u32 == std::vector<std::uint32_t>{0, 1, 2, 0, 1, 2});
  fs::remove_all(dir);
}
