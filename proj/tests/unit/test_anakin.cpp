#include <doctest.h>

#include <cmath>
#include <vector>

#include "podracer/anakin.hpp"

using namespace podracer;

namespace {

AgentConfig small_agent() {
  AgentConfig a;
  a.hidden_dim = 16;
  a.learning_rate = 0.01f;
  return a;
}

std::vector<std::uint32_t> packed_env_slots(RngKey env_master, std::size_t first,
                                            std::size_t count) {
  std::vector<std::uint32_t> slots(count * detail::kAnakinSlotWords, 0);
  for (std::size_t b = 0; b < count; ++b) {
    const CatchState s = catch_initial_state(fold_in(env_master, first + b));
    catch_state_pack(s, slots.data() + b * detail::kAnakinSlotWords);
    slots[b * detail::kAnakinSlotWords + kCatchStateWords] =
        std::bit_cast<std::uint32_t>(0.0f);
  }
  return slots;
}

}  // namespace

TEST_CASE("anakin_unit with batch 1 equals the scalar loop") {
  const AgentConfig agent = small_agent();
  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  const Params params = mlp_init(make_key(1), dims.obs_dim, dims.hidden_dim,
                                 dims.num_actions);
  const std::vector<float> flat = params.flatten();
  const RngKey env_master = make_key(2);
  const RngKey act_master = make_key(3);

  AnakinConfig cfg;
  cfg.num_cores = 1;
  cfg.batch_per_core = 1;
  cfg.unroll_length = 8;
  cfg.total_steps = 8;

  auto unit_state = packed_env_slots(env_master, 0, 1);
  std::vector<float> unit_grads(dims.param_count());
  std::vector<float> unit_metrics(detail::kAnakinMetricCount, 0.0f);
  const LossMetrics unit_loss =
      anakin_unit(flat, dims, unit_state, act_master, /*update=*/0,
                  /*slot_offset=*/0, cfg, agent, unit_grads, unit_metrics);

  // scalar reference: step one env T times through the host-level ops
  CatchState s = catch_initial_state(fold_in(env_master, 0));
  Trajectory traj = Trajectory::make(8, 1, kCatchObsDim, kCatchNumActions);
  for (std::size_t t = 0; t < 8; ++t) {
    Tensor obs({1, kCatchObsDim});
    catch_observe_into(s, obs.data);
    std::copy(obs.data.begin(), obs.data.end(),
              traj.observations.begin() + t * kCatchObsDim);
    const auto [actions, logits] =
        select_actions(params, obs, fold_in(act_master, t));
    traj.actions[t] = actions[0];
    std::copy(logits.data.begin(), logits.data.end(),
              traj.behavior_logits.begin() + t * kCatchNumActions);
    CatchTimeStep ts;
    s = catch_step(s, actions[0], ts);
    traj.rewards[t] = ts.reward;
    traj.dones[t] = ts.done ? 1 : 0;
  }
  catch_observe_into(s, traj.bootstrap_observation);

  std::vector<float> targets, advantages;
  compute_update_targets(traj, params, agent, targets, advantages);
  LossBatchView batch;
  batch.unroll_len = 8;
  batch.batch = 1;
  batch.observations = traj.observations;
  batch.actions = traj.actions;
  batch.advantages = advantages;
  batch.value_targets = targets;
  std::vector<float> ref_grads(dims.param_count());
  const LossMetrics ref_loss =
      loss_and_grads_flat(flat, dims, batch, agent.loss_costs(), ref_grads);

  CHECK(unit_loss.total == ref_loss.total);
  CHECK(unit_grads == ref_grads);
  const CatchState end_state = catch_state_unpack(unit_state.data());
  CHECK(end_state == s);
}

TEST_CASE("vectorized unit gradients equal the per-slot loop, mean-reduced") {
  const AgentConfig agent = small_agent();
  const MlpDims dims{kCatchObsDim, agent.hidden_dim, kCatchNumActions};
  const Params params = mlp_init(make_key(5), dims.obs_dim, dims.hidden_dim,
                                 dims.num_actions);
  const std::vector<float> flat = params.flatten();
  const RngKey env_master = make_key(6);
  const RngKey act_master = make_key(7);
  const std::size_t B = 4, T = 8;  // powers of two keep the reduction exact

  AnakinConfig batched;
  batched.num_cores = 1;
  batched.batch_per_core = B;
  batched.unroll_length = T;
  batched.total_steps = B * T;

  auto state = packed_env_slots(env_master, 0, B);
  std::vector<float> grads(dims.param_count());
  std::vector<float> metrics(detail::kAnakinMetricCount, 0.0f);
  anakin_unit(flat, dims, state, act_master, 0, 0, batched, agent, grads, metrics);

  // unvectorized loop: one slot at a time, then the same fixed tree + scale
  AnakinConfig scalar = batched;
  scalar.batch_per_core = 1;
  scalar.total_steps = T;
  std::vector<std::vector<float>> slot_grads(B);
  std::vector<std::vector<std::uint32_t>> slot_states(B);
  for (std::size_t g = 0; g < B; ++g) {
    slot_states[g] = packed_env_slots(env_master, g, 1);
    slot_grads[g].resize(dims.param_count());
    std::vector<float> m2(detail::kAnakinMetricCount, 0.0f);
    anakin_unit(flat, dims, slot_states[g], act_master, 0, /*slot_offset=*/g,
                scalar, agent, slot_grads[g], m2);
  }
  // slot grads are means over T items; combine with the tree and divide by
  // the (power-of-two) slot count
  std::vector<float> combined = tree_sum_vectors(B, [&](std::size_t i) {
    return std::span<const float>(slot_grads[i].data(), slot_grads[i].size());
  });
  for (float& x : combined) x /= static_cast<float>(B);

  CHECK(combined == grads);
  for (std::size_t g = 0; g < B; ++g) {
    const CatchState from_batch =
        catch_state_unpack(state.data() + g * detail::kAnakinSlotWords);
    const CatchState from_loop = catch_state_unpack(slot_states[g].data());
    CHECK(from_batch == from_loop);
  }
}

TEST_CASE("anakin_train is deterministic and keeps the data plane off the host") {
  MeshConfig mc;
  mc.num_cores = 2;
  AnakinConfig cfg;
  cfg.num_cores = 2;
  cfg.batch_per_core = 4;
  cfg.unroll_length = 8;
  cfg.total_steps = 2 * 4 * 8 * 6;  // 6 updates
  cfg.seed = 99;
  cfg.log_interval = 2;
  const AgentConfig agent = small_agent();

  AnakinResult r1, r2;
  {
    Mesh mesh(mc);
    r1 = anakin_train(mesh, cfg, agent);
  }
  {
    Mesh mesh(mc);
    r2 = anakin_train(mesh, cfg, agent);
  }
  CHECK(r1.final_params == r2.final_params);
  CHECK(r1.replicas_in_sync);
  CHECK(r1.h2d_bytes_after_init == r1.h2d_bytes_final);
  CHECK(r1.updates == 6);
  CHECK(r1.log.size() == 3);
  REQUIRE(r1.log.size() == r2.log.size());
  for (std::size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].update == r2.log[i].update);
    CHECK(r1.log[i].env_steps == r2.log[i].env_steps);
    CHECK(r1.log[i].mean_return == r2.log[i].mean_return);
    CHECK(r1.log[i].loss == r2.log[i].loss);
  }
}

TEST_CASE("n cores with batch k match one core with batch nk, bitwise") {
  const AgentConfig agent = small_agent();
  const std::size_t k = 4, n = 4, T = 8, updates = 5;

  AnakinConfig wide;
  wide.num_cores = n;
  wide.batch_per_core = k;
  wide.unroll_length = T;
  wide.total_steps = n * k * T * updates;
  wide.seed = 1234;

  AnakinConfig tall;
  tall.num_cores = 1;
  tall.batch_per_core = n * k;
  tall.unroll_length = T;
  tall.total_steps = n * k * T * updates;
  tall.seed = 1234;

  AnakinOptions capture;
  capture.capture_params = true;

  AnakinResult rw, rt;
  {
    MeshConfig mc;
    mc.num_cores = n;
    Mesh mesh(mc);
    rw = anakin_train(mesh, wide, agent, capture);
  }
  {
    MeshConfig mc;
    mc.num_cores = 1;
    Mesh mesh(mc);
    rt = anakin_train(mesh, tall, agent, capture);
  }
  REQUIRE(rw.param_history.size() == updates);
  REQUIRE(rt.param_history.size() == updates);
  for (std::size_t u = 0; u < updates; ++u)
    CHECK(rw.param_history[u] == rt.param_history[u]);
  CHECK(rw.final_params == rt.final_params);
}

TEST_CASE("config exceeding the mesh is rejected") {
  MeshConfig mc;
  mc.num_cores = 2;
  Mesh mesh(mc);
  AnakinConfig cfg;
  cfg.num_cores = 4;
  cfg.total_steps = 100;
  CHECK_THROWS_AS(anakin_train(mesh, cfg, small_agent()), ConfigError);
}
