#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "podracer/sebulba.hpp"

using namespace podracer;

namespace {

MeshConfig pod_mesh(std::size_t replicas = 1, std::size_t cores_per_host = 8) {
  MeshConfig mc;
  mc.num_cores = replicas * cores_per_host;
  mc.cores_per_host = cores_per_host;
  return mc;
}

AgentConfig small_agent() {
  AgentConfig a;
  a.hidden_dim = 16;
  a.learning_rate = 0.01f;
  return a;
}

Trajectory random_trajectory(RngKey key, std::size_t T, std::size_t B) {
  Trajectory t = Trajectory::make(T, B, kCatchObsDim, kCatchNumActions);
  for (std::size_t i = 0; i < t.observations.size(); ++i)
    t.observations[i] = random_symmetric_float(fold_in(key, 1), i, 1.0f);
  for (std::size_t i = 0; i < t.behavior_logits.size(); ++i)
    t.behavior_logits[i] = random_symmetric_float(fold_in(key, 2), i, 1.0f);
  for (std::size_t i = 0; i < T * B; ++i) {
    t.actions[i] = random_below(fold_in(key, 3), i, 3);
    t.rewards[i] = random_symmetric_float(fold_in(key, 4), i, 1.0f);
    t.dones[i] = random_below(fold_in(key, 5), i, 6) == 0;
  }
  for (std::size_t i = 0; i < t.bootstrap_observation.size(); ++i)
    t.bootstrap_observation[i] = random_symmetric_float(fold_in(key, 6), i, 1.0f);
  return t;
}

// Gradient of one update on a trajectory, host path.
std::vector<float> trajectory_grads(const Params& params, const Trajectory& traj,
                                    const AgentConfig& agent) {
  const MlpDims d = mlp_dims_of(params);
  const std::vector<float> flat = params.flatten();
  std::vector<float> targets(traj.unroll_len * traj.batch),
      advantages(traj.unroll_len * traj.batch);
  compute_update_targets_flat(flat, d, traj, agent, targets, advantages);
  LossBatchView batch;
  batch.unroll_len = traj.unroll_len;
  batch.batch = traj.batch;
  batch.observations = traj.observations;
  batch.actions = traj.actions;
  batch.advantages = advantages;
  batch.value_targets = targets;
  std::vector<float> grads(d.param_count());
  loss_and_grads_flat(flat, d, batch, agent.loss_costs(), grads);
  return grads;
}

}  // namespace

TEST_CASE("shards transfer to learner cores and concatenate back bitwise") {
  Mesh mesh(pod_mesh());
  const CoreId actor{0};
  const std::vector<CoreId> learners{CoreId{2}, CoreId{3}, CoreId{4}};
  const std::size_t T = 5, B = 6;

  for (int trial = 0; trial < 10; ++trial) {
    const Trajectory original = random_trajectory(fold_in(make_key(100), trial), T, B);
    const DeviceBuffer obs =
        mesh.put(actor, original.observations, {T, B, kCatchObsDim});
    const DeviceBuffer act = mesh.put_u32(actor, original.actions, {T, B});
    const DeviceBuffer logit =
        mesh.put(actor, original.behavior_logits, {T, B, kCatchNumActions});
    const DeviceBuffer rew = mesh.put(actor, original.rewards, {T, B});
    std::vector<std::uint32_t> dones32(original.dones.begin(), original.dones.end());
    const DeviceBuffer don = mesh.put_u32(actor, dones32, {T, B});
    const DeviceBuffer boot =
        mesh.put(actor, original.bootstrap_observation, {B, kCatchObsDim});

    const std::uint64_t h2d_before = mesh.total_h2d_bytes();
    auto shards = shard_trajectory_to_learners(mesh, actor, obs, act, logit, rew,
                                               don, boot, learners, T, B,
                                               kCatchObsDim, kCatchNumActions);
    CHECK(mesh.total_h2d_bytes() == h2d_before);  // movement is d2d only
    REQUIRE(shards.size() == 3);
    for (std::size_t l = 0; l < 3; ++l) {
      CHECK(shards[l].observations.owner() == learners[l]);
      CHECK(shards[l].actions.shape() == std::vector<std::size_t>{T, B / 3});
    }
    const Trajectory back =
        gather_shards(mesh, shards, T, kCatchObsDim, kCatchNumActions);
    CHECK(back == original);
  }
}

TEST_CASE("sharded mean gradient equals the unsharded batch gradient") {
  const AgentConfig agent = small_agent();
  const Params params = mlp_init(make_key(7), kCatchObsDim, agent.hidden_dim,
                                 kCatchNumActions);

  // power-of-two shard count: bitwise
  {
    const Trajectory full = random_trajectory(make_key(8), 8, 8);
    const auto want = trajectory_grads(params, full, agent);
    const auto shards = trajectory_shard(full, 4);
    std::vector<std::vector<float>> shard_grads;
    for (const auto& s : shards)
      shard_grads.push_back(trajectory_grads(params, s, agent));
    std::vector<float> mean = tree_sum_vectors(4, [&](std::size_t i) {
      return std::span<const float>(shard_grads[i].data(), shard_grads[i].size());
    });
    for (float& x : mean) x /= 4.0f;
    CHECK(mean == want);
  }

  // non-power-of-two shard count: algebraically equal, tiny float slack
  {
    const Trajectory full = random_trajectory(make_key(9), 4, 6);
    const auto want = trajectory_grads(params, full, agent);
    const auto shards = trajectory_shard(full, 3);
    std::vector<std::vector<float>> shard_grads;
    for (const auto& s : shards)
      shard_grads.push_back(trajectory_grads(params, s, agent));
    std::vector<float> mean = tree_sum_vectors(3, [&](std::size_t i) {
      return std::span<const float>(shard_grads[i].data(), shard_grads[i].size());
    });
    for (float& x : mean) x /= 3.0f;
    for (std::size_t i = 0; i < want.size(); ++i)
      CHECK(mean[i] == doctest::Approx(want[i]).epsilon(1e-4));
  }
}

TEST_CASE("time-split updates: one big step vs N sequential steps") {
  const AgentConfig agent = small_agent();
  const Trajectory frozen = random_trajectory(make_key(10), 8, 4);

  auto loss_on = [&](const Params& p) {
    const MlpDims d = mlp_dims_of(p);
    const std::vector<float> flat = p.flatten();
    std::vector<float> targets(8 * 4), advantages(8 * 4);
    compute_update_targets_flat(flat, d, frozen, agent, targets, advantages);
    LossBatchView batch;
    batch.unroll_len = 8;
    batch.batch = 4;
    batch.observations = frozen.observations;
    batch.actions = frozen.actions;
    batch.advantages = advantages;
    batch.value_targets = targets;
    return loss_only<float>(std::span<const float>(flat), d, batch,
                            agent.loss_costs());
  };

  Params single = mlp_init(make_key(11), kCatchObsDim, agent.hidden_dim,
                           kCatchNumActions);
  Params split = single;
  const float loss_before = loss_on(single);

  OptimizerState opt1 = OptimizerState::zeros_like(single);
  for (int i = 0; i < 5; ++i) agent_update(single, opt1, frozen, agent);

  OptimizerState opt2 = OptimizerState::zeros_like(split);
  const auto halves = [&] {
    std::vector<Trajectory> hs;
    for (std::size_t j = 0; j < 2; ++j) {
      Trajectory h = Trajectory::make(4, 4, kCatchObsDim, kCatchNumActions);
      const std::size_t t0 = j * 4;
      std::copy_n(frozen.observations.begin() + t0 * 4 * kCatchObsDim,
                  4 * 4 * kCatchObsDim, h.observations.begin());
      std::copy_n(frozen.actions.begin() + t0 * 4, 4 * 4, h.actions.begin());
      std::copy_n(frozen.behavior_logits.begin() + t0 * 4 * kCatchNumActions,
                  4 * 4 * kCatchNumActions, h.behavior_logits.begin());
      std::copy_n(frozen.rewards.begin() + t0 * 4, 4 * 4, h.rewards.begin());
      std::copy_n(frozen.dones.begin() + t0 * 4, 4 * 4, h.dones.begin());
      if (j == 1)
        h.bootstrap_observation = frozen.bootstrap_observation;
      else
        std::copy_n(frozen.observations.begin() + 4 * 4 * kCatchObsDim,
                    4 * kCatchObsDim, h.bootstrap_observation.begin());
      hs.push_back(std::move(h));
    }
    return hs;
  }();
  for (int i = 0; i < 5; ++i)
    for (const auto& h : halves) agent_update(split, opt2, h, agent);

  CHECK(single != split);  // sequential SGD is not one big step
  CHECK(all_finite(single.flatten()));
  CHECK(all_finite(split.flatten()));
  CHECK(loss_on(single) < loss_before);
  CHECK(loss_on(split) < loss_before);
}

TEST_CASE("the synchronous degenerate configuration reproduces a reference loop") {
  SebulbaConfig cfg;
  cfg.actor_cores = 1;
  cfg.learner_cores = 1;
  cfg.threads_per_actor_core = 1;
  cfg.actor_batch = 4;
  cfg.trajectory_length = 6;
  cfg.queue_capacity = 1;
  cfg.replicas = 1;
  cfg.env_workers = 1;
  cfg.seed = 77;
  const std::size_t updates = 12;
  cfg.total_frames = cfg.trajectory_length * cfg.actor_batch * updates;
  const AgentConfig agent = small_agent();

  SebulbaOptions opts;
  opts.capture_params = true;
  Mesh mesh(pod_mesh());
  const SebulbaResult run = sebulba_train(mesh, cfg, agent, opts);
  REQUIRE(run.param_history.size() == updates);

  // single-threaded reference with the same key plumbing
  const RngKey master = make_key(cfg.seed);
  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  Params params = mlp_init(fold_in(master, 0), dims.obs_dim, dims.hidden_dim,
                           dims.num_actions);
  OptimizerState opt = OptimizerState::zeros_like(params);
  BatchedEnv env(cfg.actor_batch, fold_in(fold_in(master, 1), 0, 0, 0), 1);
  const RngKey act_key = fold_in(fold_in(master, 2), 0, 0, 0);
  const std::size_t T = cfg.trajectory_length, B = cfg.actor_batch;

  for (std::size_t round = 0; round < updates; ++round) {
    Trajectory traj = Trajectory::make(T, B, dims.obs_dim, dims.num_actions);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor obs({B, dims.obs_dim});
      std::copy(env.observations().begin(), env.observations().end(),
                obs.data.begin());
      std::copy(obs.data.begin(), obs.data.end(),
                traj.observations.begin() + t * B * dims.obs_dim);
      const auto [actions, logits] =
          select_actions(params, obs, fold_in(act_key, round * T + t));
      std::copy(actions.begin(), actions.end(), traj.actions.begin() + t * B);
      std::copy(logits.data.begin(), logits.data.end(),
                traj.behavior_logits.begin() + t * B * dims.num_actions);
      env.step(actions);
      for (std::size_t b = 0; b < B; ++b) {
        traj.rewards[t * B + b] = env.rewards()[b];
        traj.dones[t * B + b] = env.dones()[b];
      }
    }
    std::copy(env.observations().begin(), env.observations().end(),
              traj.bootstrap_observation.begin());
    agent_update(params, opt, traj, agent);
    CHECK(params.flatten() == run.param_history[round]);
  }
  CHECK(params == run.final_params);
}

TEST_CASE("sebulba keeps roles disjoint and learners in sync") {
  SebulbaConfig cfg;
  cfg.actor_cores = 1;
  cfg.learner_cores = 2;
  cfg.threads_per_actor_core = 2;
  cfg.actor_batch = 4;
  cfg.trajectory_length = 4;
  cfg.queue_capacity = 3;
  cfg.env_workers = 2;
  cfg.seed = 5;
  cfg.total_frames = 4 * 4 * 25;
  const AgentConfig agent = small_agent();

  Mesh mesh(pod_mesh());
  const SebulbaResult run = sebulba_train(mesh, cfg, agent);

  CHECK(run.learners_in_sync);
  CHECK(run.max_queue_occupancy <= cfg.queue_capacity);
  CHECK(run.max_param_lag <=
        cfg.queue_capacity + cfg.threads_per_actor_core);
  CHECK(run.frames >= cfg.total_frames);
  CHECK(all_finite(run.final_params.flatten()));

  // actor cores never learn; learner cores never act
  CHECK(mesh.program_count(CoreId{0}, "learn") == 0);
  CHECK(mesh.program_count(CoreId{0}, "act") > 0);
  CHECK(mesh.program_count(CoreId{0}, "shard") > 0);
  for (std::size_t l = 1; l <= 2; ++l) {
    CHECK(mesh.program_count(CoreId{l}, "act") == 0);
    CHECK(mesh.program_count(CoreId{l}, "shard") == 0);
    CHECK(mesh.program_count(CoreId{l}, "learn") > 0);
    CHECK(mesh.stats(CoreId{l}).d2d_bytes > 0);  // trajectory shards arrive d2d
  }
  // parameters flow back to the actor core over the device fabric
  CHECK(mesh.stats(CoreId{0}).d2d_bytes > 0);
}

TEST_CASE("split updates run through the learner loop") {
  SebulbaConfig cfg;
  cfg.actor_cores = 1;
  cfg.learner_cores = 2;
  cfg.threads_per_actor_core = 1;
  cfg.actor_batch = 4;
  cfg.trajectory_length = 8;
  cfg.queue_capacity = 2;
  cfg.env_workers = 1;
  cfg.seed = 15;
  cfg.split_updates = 2;
  cfg.total_frames = 8 * 4 * 10;  // 10 rounds
  const AgentConfig agent = small_agent();

  Mesh mesh(pod_mesh());
  const SebulbaResult run = sebulba_train(mesh, cfg, agent);
  CHECK(run.updates == 20);  // two updates per consumed trajectory
  CHECK(run.learners_in_sync);
  CHECK(all_finite(run.final_params.flatten()));
}

TEST_CASE("a slowed learner produces backpressure within bounds") {
  SebulbaConfig cfg;
  cfg.actor_cores = 1;
  cfg.learner_cores = 1;
  cfg.threads_per_actor_core = 1;
  cfg.actor_batch = 4;
  cfg.trajectory_length = 4;
  cfg.queue_capacity = 2;
  cfg.env_workers = 1;
  cfg.seed = 6;
  cfg.total_frames = 4 * 4 * 20;
  cfg.injected_learner_delay_ms = 5;
  const AgentConfig agent = small_agent();

  Mesh mesh(pod_mesh());
  const SebulbaResult run = sebulba_train(mesh, cfg, agent);
  CHECK(run.actor_blocked_events > 0);
  CHECK(run.max_queue_occupancy <= cfg.queue_capacity);
  CHECK(run.max_param_lag <= cfg.queue_capacity + cfg.threads_per_actor_core);
}

TEST_CASE("recorded behavior logits replay bitwise against archived versions") {
  SebulbaConfig cfg;
  cfg.actor_cores = 1;
  cfg.learner_cores = 2;
  cfg.threads_per_actor_core = 1;
  cfg.actor_batch = 4;
  cfg.trajectory_length = 4;
  cfg.queue_capacity = 2;
  cfg.env_workers = 1;
  cfg.seed = 21;
  cfg.total_frames = 4 * 4 * 10;
  const AgentConfig agent = small_agent();

  SebulbaOptions opts;
  opts.archive_param_versions = true;
  opts.record_consumed = true;
  Mesh mesh(pod_mesh());
  const SebulbaResult run = sebulba_train(mesh, cfg, agent, opts);
  REQUIRE(!run.consumed.empty());

  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  for (const auto& rec : run.consumed) {
    const Trajectory& tr = rec.trajectory;
    for (std::size_t t = 0; t < tr.unroll_len; ++t) {
      const auto it = run.version_archive.find(rec.step_versions[t]);
      REQUIRE(it != run.version_archive.end());
      const auto m = mlp_view<float>(
          std::span<const float>(it->second.data(), it->second.size()), dims);
      for (std::size_t b = 0; b < tr.batch; ++b) {
        float logits[kCatchNumActions], value;
        mlp_forward_row<float>(
            m, tr.observations.data() + (t * tr.batch + b) * dims.obs_dim,
            nullptr, logits, &value);
        for (std::size_t a = 0; a < kCatchNumActions; ++a)
          CHECK(logits[a] ==
                tr.behavior_logits[(t * tr.batch + b) * kCatchNumActions + a]);
      }
    }
  }
}

TEST_CASE("sebulba config validation") {
  const MeshConfig mc = pod_mesh();
  SebulbaConfig cfg;
  cfg.total_frames = 100;

  SebulbaConfig bad = cfg;
  bad.actor_cores = 3;
  bad.learner_cores = 6;
  CHECK_THROWS_AS(bad.validate(mc), ConfigError);

  bad = cfg;
  bad.actor_batch = 10;
  bad.learner_cores = 3;
  CHECK_THROWS_AS(bad.validate(mc), ConfigError);

  bad = cfg;
  bad.split_updates = 3;
  bad.trajectory_length = 20;
  CHECK_THROWS_AS(bad.validate(mc), ConfigError);

  bad = cfg;
  bad.replicas = 2;
  CHECK_THROWS_AS(bad.validate(mc), ConfigError);  // 8-core mesh, need 16

  SebulbaConfig good = cfg;
  good.actor_batch = 30;
  good.learner_cores = 6;
  good.actor_cores = 2;
  CHECK_NOTHROW(good.validate(mc));
}
