#include <doctest.h>

#include <chrono>
#include <memory>
#include <set>
#include <thread>
#include <vector>

#include "podracer/batched_env.hpp"

using namespace podracer;

namespace {

std::vector<std::uint32_t> random_actions(RngKey key, std::uint64_t step,
                                          std::size_t b) {
  std::vector<std::uint32_t> a(b);
  for (std::size_t i = 0; i < b; ++i)
    a[i] = random_below(fold_in(key, step), i, 3);
  return a;
}

}  // namespace

TEST_CASE("sub-envs get distinct derived seeds") {
  BatchedEnv env(64, make_key(1), 8);
  // at least two distinct initial ball columns across 64 envs
  std::set<std::vector<float>> distinct;
  for (std::size_t i = 0; i < 64; ++i) {
    auto row = env.observations().subspan(i * kCatchObsDim, kCatchObsDim);
    distinct.insert(std::vector<float>(row.begin(), row.end()));
  }
  CHECK(distinct.size() >= 2);
}

TEST_CASE("creation is deterministic in the seed") {
  BatchedEnv a(16, make_key(7), 4);
  BatchedEnv b(16, make_key(7), 2);
  const auto oa = a.observations();
  const auto ob = b.observations();
  CHECK(std::vector<float>(oa.begin(), oa.end()) ==
        std::vector<float>(ob.begin(), ob.end()));
}

TEST_CASE("zero envs are rejected") {
  CHECK_THROWS_AS(std::make_unique<BatchedEnv>(0, make_key(0), std::size_t{1}), ConfigError);
}

TEST_CASE("wrong action batch size is rejected") {
  BatchedEnv env(4, make_key(0), 1);
  std::vector<std::uint32_t> actions(3, 1);
  CHECK_THROWS_AS(env.step(actions), ConfigError);
}

TEST_CASE("B=1 batched env matches the bare env in lockstep") {
  const RngKey seed = make_key(42);
  BatchedEnv batched(1, seed, 2);
  CatchState bare = catch_initial_state(fold_in(seed, 0));

  std::vector<float> bare_obs(kCatchObsDim);
  catch_observe_into(bare, bare_obs);
  CHECK(std::vector<float>(batched.observations().begin(),
                           batched.observations().end()) == bare_obs);

  for (std::uint64_t step = 0; step < 30; ++step) {
    const auto actions = random_actions(make_key(9), step, 1);
    batched.step(actions);
    CatchTimeStep ts;
    bare = catch_step(bare, actions[0], ts);
    catch_observe_into(bare, bare_obs);
    CHECK(std::vector<float>(batched.observations().begin(),
                             batched.observations().end()) == bare_obs);
    CHECK(batched.rewards()[0] == ts.reward);
    CHECK((batched.dones()[0] != 0) == ts.done);
  }
}

TEST_CASE("results do not depend on the worker count") {
  const RngKey seed = make_key(99);
  BatchedEnv one(32, seed, 1);
  BatchedEnv eight(32, seed, 8);
  for (std::uint64_t step = 0; step < 40; ++step) {
    const auto actions = random_actions(make_key(13), step, 32);
    one.step(actions);
    eight.step(actions);
    const auto a = one.observations();
    const auto b = eight.observations();
    REQUIRE(std::vector<float>(a.begin(), a.end()) ==
            std::vector<float>(b.begin(), b.end()));
    REQUIRE(std::vector<float>(one.rewards().begin(), one.rewards().end()) ==
            std::vector<float>(eight.rewards().begin(), eight.rewards().end()));
  }
}

TEST_CASE("episodes end together after nine steps and auto-reset") {
  BatchedEnv env(16, make_key(3), 4);
  for (int step = 1; step <= 9; ++step) {
    std::vector<std::uint32_t> stay(16, 1);
    env.step(stay);
    for (std::size_t i = 0; i < 16; ++i) {
      if (step < 9) {
        CHECK(env.dones()[i] == 0);
        CHECK(env.rewards()[i] == 0.0f);
      } else {
        CHECK(env.dones()[i] == 1);
        CHECK(std::abs(env.rewards()[i]) == 1.0f);
      }
    }
  }
  // after auto-reset the observation is a fresh top-row grid, never terminal
  for (std::size_t i = 0; i < 16; ++i) {
    auto row = env.observations().subspan(i * kCatchObsDim, kCatchObsDim);
    float top = 0.0f;
    for (std::size_t c = 0; c < kCatchCols; ++c) top += row[c];
    CHECK(top == 1.0f);
  }
}

TEST_CASE("worker pool speeds up heavy envs" *
          doctest::skip(std::thread::hardware_concurrency() < 8)) {
  // per-step busy work stands in for an expensive host environment
  const std::uint32_t work = 2000;
  const std::size_t B = 256;
  const int steps = 30;

  auto time_run = [&](std::size_t workers) {
    BatchedEnv env(B, make_key(5), workers, work);
    std::vector<std::uint32_t> actions(B, 1);
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < steps; ++s) env.step(actions);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  time_run(1);  // warmup
  const double serial = time_run(1);
  const double pooled = time_run(8);
  INFO("serial ", serial, "s pooled ", pooled, "s");
  CHECK(serial / pooled >= 3.0);
}
