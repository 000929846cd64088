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

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "podracer/common.hpp"
#include "podracer/tensor.hpp"

namespace podracer {

/// Index of one simulated core; stable for the mesh's lifetime.
struct CoreId {
  std::size_t index = 0;

  friend auto operator<=>(const CoreId&, const CoreId&) = default;
};

/// Ordered, duplicate-free set of cores participating in a collective.
struct CoreGroup {
  std::vector<CoreId> members;

  explicit CoreGroup(std::vector<CoreId> m = {}) : members(std::move(m)) {}

  static CoreGroup range(std::size_t begin, std::size_t count) {
    CoreGroup g;
    g.members.reserve(count);
    for (std::size_t i = 0; i < count; ++i) g.members.push_back(CoreId{begin + i});
    return g;
  }

  void validate() const {
    if (members.empty()) throw ConfigError("core group must be non-empty");
    for (std::size_t i = 0; i < members.size(); ++i)
      for (std::size_t j = i + 1; j < members.size(); ++j)
        if (members[i] == members[j])
          throw ConfigError("core group contains duplicate core " +
                            std::to_string(members[i].index));
  }

  std::vector<std::size_t> sorted_indices() const {
    std::vector<std::size_t> ids;
    ids.reserve(members.size());
    for (const CoreId& c : members) ids.push_back(c.index);
    std::sort(ids.begin(), ids.end());
    return ids;
  }
};

enum class Dtype : std::uint8_t { F32, U32 };

inline std::size_t dtype_bytes(Dtype) { return 4; }

struct MeshConfig {
  std::size_t num_cores = 0;
  std::size_t cores_per_host = 8;
  std::chrono::milliseconds collective_timeout{30000};
  bool record_execution_log = true;
  /// Named disjoint core groups (one partition); purely declarative, used
  /// for validation at creation time.
  std::map<std::string, CoreGroup> groups;

  void validate() const {
    if (num_cores == 0) throw ConfigError("mesh needs at least one core");
    if (cores_per_host == 0) throw ConfigError("cores_per_host must be positive");
    if (num_cores > cores_per_host && num_cores % cores_per_host != 0)
      throw ConfigError("cores_per_host must divide num_cores for multi-host meshes");
    std::vector<bool> seen(num_cores, false);
    for (const auto& [name, group] : groups) {
      group.validate();
      for (const CoreId& c : group.members) {
        if (c.index >= num_cores)
          throw ConfigError("group '" + name + "' references core " +
                            std::to_string(c.index) + " outside the mesh");
        if (seen[c.index])
          throw ConfigError("core " + std::to_string(c.index) +
                            " appears in more than one group");
        seen[c.index] = true;
      }
    }
  }
};

/// Per-core transfer counters. There is deliberately no device-to-host
/// counter: the properties these counters exist to prove are about what
/// flows *into* device memory and *between* devices.
struct TransferStats {
  std::uint64_t h2d_bytes = 0;
  std::uint64_t d2d_bytes = 0;
  std::uint64_t collectives = 0;
};

struct ExecRecord {
  std::string tag;
  std::chrono::steady_clock::time_point start;
  std::chrono::steady_clock::time_point end;
};

class Mesh;
class CoreExec;

namespace detail {

struct BufferStorage {
  std::uint64_t id = 0;
  std::size_t owner = 0;
  Dtype dtype = Dtype::F32;
  std::vector<std::size_t> shape;
  std::vector<float> f32;
  std::vector<std::uint32_t> u32;
  std::atomic<bool> freed{false};

  std::size_t numel() const { return shape_numel(shape); }
  std::size_t bytes() const { return numel() * 4; }
};

}  // namespace detail

/// Handle to a tensor resident in one core's private memory. Copyable;
/// the storage is reclaimed when the last handle goes away.
class DeviceBuffer {
 public:
  DeviceBuffer() = default;

  bool valid() const { return s_ != nullptr; }
  CoreId owner() const { return CoreId{storage().owner}; }
  Dtype dtype() const { return storage().dtype; }
  const std::vector<std::size_t>& shape() const { return storage().shape; }
  std::size_t numel() const { return storage().numel(); }
  std::size_t bytes() const { return storage().bytes(); }

 private:
  friend class Mesh;
  friend class CoreExec;
  explicit DeviceBuffer(std::shared_ptr<detail::BufferStorage> s) : s_(std::move(s)) {}

  detail::BufferStorage& storage() const {
    if (!s_) throw MeshError("operation on empty device buffer handle");
    if (s_->freed.load(std::memory_order_acquire))
      throw MeshError("use-after-free: device buffer " + std::to_string(s_->id) +
                      " on core " + std::to_string(s_->owner) + " was freed");
    return *s_;
  }

  std::shared_ptr<detail::BufferStorage> s_;
};

/// Execution context handed to a program running on a core. All buffer
/// access is checked against the executing core; data owned by other cores
/// is unreachable from here, which is the simulated memory-isolation
/// contract.
class CoreExec {
 public:
  CoreId core() const { return CoreId{core_}; }
  Mesh& mesh() { return *mesh_; }

  std::span<const float> f32(const DeviceBuffer& b) const {
    auto& s = checked(b, Dtype::F32);
    return {s.f32.data(), s.f32.size()};
  }
  std::span<float> f32_mut(const DeviceBuffer& b) {
    auto& s = checked(b, Dtype::F32);
    return {s.f32.data(), s.f32.size()};
  }
  std::span<const std::uint32_t> u32(const DeviceBuffer& b) const {
    auto& s = checked(b, Dtype::U32);
    return {s.u32.data(), s.u32.size()};
  }
  std::span<std::uint32_t> u32_mut(const DeviceBuffer& b) {
    auto& s = checked(b, Dtype::U32);
    return {s.u32.data(), s.u32.size()};
  }

  inline DeviceBuffer alloc_f32(std::vector<std::size_t> shape);
  inline DeviceBuffer alloc_u32(std::vector<std::size_t> shape);

 private:
  friend class Mesh;
  CoreExec(Mesh* mesh, std::size_t core) : mesh_(mesh), core_(core) {}

  detail::BufferStorage& checked(const DeviceBuffer& b, Dtype want) const {
    auto& s = b.storage();
    if (s.owner != core_)
      throw OwnershipError("program on core " + std::to_string(core_) +
                           " touched buffer " + std::to_string(s.id) +
                           " owned by core " + std::to_string(s.owner));
    if (s.dtype != want) throw MeshError("buffer dtype mismatch");
    return s;
  }

  Mesh* mesh_;
  std::size_t core_;
};

using Program = std::function<std::vector<DeviceBuffer>(CoreExec&)>;

/// Simulated slice of an accelerator pod: cores with private memory,
/// one-program-at-a-time execution per core, explicit transfers, and
/// rendezvous collectives. Shareable across threads; per-core
/// serialization is internal.
class Mesh {
 public:
  explicit Mesh(MeshConfig config) : config_(std::move(config)) {
    config_.validate();
    const char* cap_env = std::getenv("PODRACER_THREADS");
    if (cap_env != nullptr) gate_limit_ = std::strtoull(cap_env, nullptr, 10);
    cores_.reserve(config_.num_cores);
    for (std::size_t i = 0; i < config_.num_cores; ++i)
      cores_.push_back(std::make_unique<Core>());
    for (std::size_t i = 0; i < config_.num_cores; ++i)
      cores_[i]->worker = std::thread([this, i] { worker_loop(i); });
  }

  ~Mesh() {
    for (auto& core : cores_) {
      {
        std::lock_guard lk(core->m);
        core->stopping = true;
      }
      core->cv.notify_all();
    }
    for (auto& core : cores_) core->worker.join();
  }

  Mesh(const Mesh&) = delete;
  Mesh& operator=(const Mesh&) = delete;

  std::size_t num_cores() const { return cores_.size(); }
  const MeshConfig& config() const { return config_; }

  // ---- host <-> device ----

  DeviceBuffer put(CoreId core, const Tensor& host) {
    return put(core, std::span<const float>(host.data), host.shape);
  }

  DeviceBuffer put(CoreId core, std::span<const float> data,
                   std::vector<std::size_t> shape) {
    check_core(core);
    if (data.size() != shape_numel(shape))
      throw ConfigError("put: data length does not match shape");
    auto s = new_storage(core.index, Dtype::F32, std::move(shape));
    s->f32.assign(data.begin(), data.end());
    cores_[core.index]->h2d_bytes.fetch_add(s->bytes(), std::memory_order_relaxed);
    return DeviceBuffer(std::move(s));
  }

  DeviceBuffer put_u32(CoreId core, std::span<const std::uint32_t> data,
                       std::vector<std::size_t> shape) {
    check_core(core);
    if (data.size() != shape_numel(shape))
      throw ConfigError("put: data length does not match shape");
    auto s = new_storage(core.index, Dtype::U32, std::move(shape));
    s->u32.assign(data.begin(), data.end());
    cores_[core.index]->h2d_bytes.fetch_add(s->bytes(), std::memory_order_relaxed);
    return DeviceBuffer(std::move(s));
  }

  Tensor get(const DeviceBuffer& b) const {
    auto& s = b.storage();
    if (s.dtype != Dtype::F32) throw MeshError("get: buffer is not f32");
    return Tensor(s.shape, s.f32);
  }

  std::vector<std::uint32_t> get_u32(const DeviceBuffer& b) const {
    auto& s = b.storage();
    if (s.dtype != Dtype::U32) throw MeshError("get: buffer is not u32");
    return s.u32;
  }

  /// Direct device-to-device copy; host counters untouched.
  DeviceBuffer device_transfer(const DeviceBuffer& b, CoreId dst) {
    check_core(dst);
    auto& src = b.storage();
    auto s = new_storage(dst.index, src.dtype, src.shape);
    s->f32 = src.f32;
    s->u32 = src.u32;
    cores_[dst.index]->d2d_bytes.fetch_add(s->bytes(), std::memory_order_relaxed);
    return DeviceBuffer(std::move(s));
  }

  /// Explicitly releases device memory; later access through any handle is
  /// a use-after-free error. (Dropping all handles reclaims memory too.)
  void free(DeviceBuffer& b) {
    auto& s = b.storage();
    s.freed.store(true, std::memory_order_release);
    s.f32.clear();
    s.f32.shrink_to_fit();
    s.u32.clear();
    s.u32.shrink_to_fit();
  }

  // ---- program execution ----

  /// Queue a program on a core. Programs queued on one core run serially
  /// in submission order; distinct cores run concurrently. All inputs must
  /// already be resident on the target core.
  std::future<std::vector<DeviceBuffer>> submit(CoreId core, std::string tag,
                                                Program program,
                                                std::vector<DeviceBuffer> inputs = {}) {
    check_core(core);
    for (const DeviceBuffer& in : inputs) {
      auto& s = in.storage();
      if (s.owner != core.index)
        throw OwnershipError("program input buffer " + std::to_string(s.id) +
                             " is owned by core " + std::to_string(s.owner) +
                             ", not core " + std::to_string(core.index) +
                             "; move it with device_transfer first");
    }
    Task task;
    task.tag = std::move(tag);
    task.program = std::move(program);
    task.inputs = std::move(inputs);
    auto future = task.done.get_future();
    auto& c = *cores_[core.index];
    {
      std::lock_guard lk(c.m);
      if (c.stopping) throw MeshError("mesh is shutting down");
      c.tasks.push_back(std::move(task));
    }
    c.cv.notify_one();
    return future;
  }

  std::vector<DeviceBuffer> run_on_core(CoreId core, std::string tag,
                                        Program program,
                                        std::vector<DeviceBuffer> inputs = {}) {
    return submit(core, std::move(tag), std::move(program), std::move(inputs)).get();
  }

  // ---- collectives ----

  /// psum: every member ends up with the elementwise sum of all members'
  /// contributions. Exactly one in-flight contribution per member core;
  /// blocks until the whole group has contributed. The reduction follows a
  /// fixed pairwise tree over ascending core ids, so results are bitwise
  /// reproducible and identical on every member.
  DeviceBuffer all_reduce_sum(const CoreGroup& group, const DeviceBuffer& contribution) {
    return all_reduce(group, contribution, /*mean=*/false);
  }

  /// pmean: as psum with the elementwise mean.
  DeviceBuffer all_reduce_mean(const CoreGroup& group, const DeviceBuffer& contribution) {
    return all_reduce(group, contribution, /*mean=*/true);
  }

  // ---- stats and logs ----

  TransferStats stats(CoreId core) const {
    check_core(core);
    const auto& c = *cores_[core.index];
    TransferStats s;
    s.h2d_bytes = c.h2d_bytes.load(std::memory_order_relaxed);
    s.d2d_bytes = c.d2d_bytes.load(std::memory_order_relaxed);
    s.collectives = c.collectives.load(std::memory_order_relaxed);
    return s;
  }

  std::vector<TransferStats> stats_snapshot() const {
    std::vector<TransferStats> all;
    all.reserve(cores_.size());
    for (std::size_t i = 0; i < cores_.size(); ++i) all.push_back(stats(CoreId{i}));
    return all;
  }

  std::uint64_t total_h2d_bytes() const {
    std::uint64_t total = 0;
    for (const auto& s : stats_snapshot()) total += s.h2d_bytes;
    return total;
  }

  nlohmann::json transfer_stats_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < cores_.size(); ++i) {
      const TransferStats s = stats(CoreId{i});
      j[std::to_string(i)] = {{"h2d_bytes", s.h2d_bytes},
                              {"d2d_bytes", s.d2d_bytes},
                              {"collectives", s.collectives}};
    }
    return j;
  }

  std::vector<ExecRecord> execution_log(CoreId core) const {
    check_core(core);
    auto& c = *cores_[core.index];
    std::lock_guard lk(c.m);
    return c.exec_log;
  }

  std::uint64_t program_count(CoreId core, const std::string& tag) const {
    check_core(core);
    auto& c = *cores_[core.index];
    std::lock_guard lk(c.m);
    auto it = c.tag_counts.find(tag);
    return it == c.tag_counts.end() ? 0 : it->second;
  }

  std::map<std::string, std::uint64_t> tag_counts(CoreId core) const {
    check_core(core);
    auto& c = *cores_[core.index];
    std::lock_guard lk(c.m);
    return c.tag_counts;
  }

  /// Total wall time spent executing programs on this core.
  double busy_seconds(CoreId core) const {
    check_core(core);
    return std::chrono::duration<double>(
               std::chrono::nanoseconds(
                   cores_[core.index]->busy_ns.load(std::memory_order_relaxed)))
        .count();
  }

 private:
  friend class CoreExec;

  struct Task {
    std::string tag;
    Program program;
    std::vector<DeviceBuffer> inputs;
    std::promise<std::vector<DeviceBuffer>> done;
  };

  struct Core {
    mutable std::mutex m;
    std::condition_variable cv;
    std::deque<Task> tasks;
    bool stopping = false;
    std::thread worker;
    std::atomic<std::uint64_t> h2d_bytes{0};
    std::atomic<std::uint64_t> d2d_bytes{0};
    std::atomic<std::uint64_t> collectives{0};
    std::atomic<std::uint64_t> busy_ns{0};
    std::vector<ExecRecord> exec_log;
    std::map<std::string, std::uint64_t> tag_counts;
  };

  // Deposits and results of in-flight collective rounds, keyed by the
  // sorted member list.
  struct GroupState {
    std::uint64_t round = 0;
    std::vector<std::size_t> deposit_shape;
    std::map<std::size_t, std::vector<float>> deposits;
    std::map<std::size_t, DeviceBuffer> results;
    bool failed = false;
    std::string failure;
  };

  void check_core(CoreId core) const {
    if (core.index >= cores_.size())
      throw MeshError("unknown core " + std::to_string(core.index) + " on a " +
                      std::to_string(cores_.size()) + "-core mesh");
  }

  std::shared_ptr<detail::BufferStorage> new_storage(std::size_t owner, Dtype dtype,
                                                     std::vector<std::size_t> shape) {
    auto s = std::make_shared<detail::BufferStorage>();
    s->id = next_buffer_id_.fetch_add(1, std::memory_order_relaxed);
    s->owner = owner;
    s->dtype = dtype;
    s->shape = std::move(shape);
    if (dtype == Dtype::F32)
      s->f32.resize(s->numel(), 0.0f);
    else
      s->u32.resize(s->numel(), 0);
    return s;
  }

  void gate_acquire() {
    if (gate_limit_ == 0) return;
    std::unique_lock lk(gate_m_);
    gate_cv_.wait(lk, [&] { return gate_active_ < gate_limit_; });
    ++gate_active_;
  }

  void gate_release() {
    if (gate_limit_ == 0) return;
    {
      std::lock_guard lk(gate_m_);
      --gate_active_;
    }
    gate_cv_.notify_one();
  }

  static bool& holds_permit() {
    thread_local bool holds = false;
    return holds;
  }

  void worker_loop(std::size_t index) {
    Core& core = *cores_[index];
    for (;;) {
      Task task;
      {
        std::unique_lock lk(core.m);
        core.cv.wait(lk, [&] { return core.stopping || !core.tasks.empty(); });
        if (core.tasks.empty()) return;  // stopping and drained
        task = std::move(core.tasks.front());
        core.tasks.pop_front();
      }
      gate_acquire();
      holds_permit() = true;
      const auto start = std::chrono::steady_clock::now();
      CoreExec ctx(this, index);
      try {
        std::vector<DeviceBuffer> outputs = task.program(ctx);
        for (const DeviceBuffer& out : outputs) {
          if (out.storage().owner != index)
            throw OwnershipError("program output is not owned by core " +
                                 std::to_string(index));
        }
        task.done.set_value(std::move(outputs));
      } catch (...) {
        task.done.set_exception(std::current_exception());
      }
      const auto end = std::chrono::steady_clock::now();
      if (holds_permit()) {
        gate_release();
        holds_permit() = false;
      }
      core.busy_ns.fetch_add(
          std::chrono::duration_cast<std::chrono::nanoseconds>(end - start).count(),
          std::memory_order_relaxed);
      {
        std::lock_guard lk(core.m);
        core.tag_counts[task.tag] += 1;
        if (config_.record_execution_log)
          core.exec_log.push_back({task.tag, start, end});
      }
    }
  }

  DeviceBuffer all_reduce(const CoreGroup& group, const DeviceBuffer& contribution,
                          bool mean) {
    group.validate();
    const std::vector<std::size_t> members = group.sorted_indices();
    for (std::size_t m : members) check_core(CoreId{m});
    auto& src = contribution.storage();
    if (src.dtype != Dtype::F32)
      throw MeshError("collectives support f32 buffers only");
    const std::size_t me = src.owner;
    if (std::find(members.begin(), members.end(), me) == members.end())
      throw MeshError("contribution from core " + std::to_string(me) +
                      " which is not a member of the group");

    std::vector<std::size_t> session_key = members;
    session_key.push_back(mean ? 1 : 0);  // sums and means never share a round
    std::unique_lock lk(collective_m_);
    GroupState& st = collectives_[session_key];
    if (st.failed) throw CollectiveTimeoutError(st.failure);
    if (st.deposits.count(me))
      throw MeshError("core " + std::to_string(me) +
                      " already has an in-flight contribution to this group");
    if (st.deposits.empty())
      st.deposit_shape = src.shape;
    else if (st.deposit_shape != src.shape) {
      st.failed = true;
      st.failure = "collective shape mismatch in group";
      collective_cv_.notify_all();
      throw MeshError("all_reduce: contribution shape does not match the group's");
    }
    st.deposits[me] = src.f32;
    const std::uint64_t my_round = st.round;

    if (st.deposits.size() == members.size()) {
      complete_round(members, st, mean);
      collective_cv_.notify_all();
    } else {
      bool released = false;
      if (holds_permit()) {
        gate_release();
        holds_permit() = false;
        released = true;
      }
      // Timed out vs woken is decided on the steady clock, but the actual
      // sleeping happens in bounded system-clock slices: the steady-clock
      // wait_until lowers to pthread_cond_clockwait, which thread
      // sanitizers (gcc 11 era) do not model.
      const auto deadline =
          std::chrono::steady_clock::now() + config_.collective_timeout;
      bool ok = false;
      for (;;) {
        if (st.round > my_round || st.failed) {
          ok = true;
          break;
        }
        if (std::chrono::steady_clock::now() >= deadline) break;
        collective_cv_.wait_until(
            lk, std::chrono::system_clock::now() + std::chrono::milliseconds(100));
      }
      if (!ok) {
        std::string missing;
        for (std::size_t m : members)
          if (!st.deposits.count(m)) missing += " " + std::to_string(m);
        st.failed = true;
        st.failure = "collective timed out after " +
                     std::to_string(config_.collective_timeout.count()) +
                     " ms; cores never contributed:" + missing;
        collective_cv_.notify_all();
        throw CollectiveTimeoutError(st.failure);
      }
      if (st.failed) throw CollectiveTimeoutError(st.failure);
      if (released) {
        lk.unlock();
        gate_acquire();
        holds_permit() = true;
        lk.lock();
      }
    }

    auto it = st.results.find(me);
    DeviceBuffer mine = std::move(it->second);
    st.results.erase(it);
    return mine;
  }

  /// Runs once per round, by the last-arriving member: fixed pairwise tree
  /// over ascending core ids, optional exact mean, result replicated to
  /// every member's memory.
  void complete_round(const std::vector<std::size_t>& members, GroupState& st,
                      bool mean) {
    const std::size_t n = members.size();
    std::vector<float> reduced = tree_sum_vectors(n, [&](std::size_t i) {
      const auto& d = st.deposits.at(members[i]);
      return std::span<const float>(d.data(), d.size());
    });
    if (mean) {
      const float denom = static_cast<float>(n);
      for (float& x : reduced) x /= denom;
    }
    const std::size_t payload = reduced.size() * 4;
    for (std::size_t m : members) {
      auto s = new_storage(m, Dtype::F32, st.deposit_shape);
      s->f32 = reduced;
      st.results[m] = DeviceBuffer(std::move(s));
      auto& core = *cores_[m];
      core.collectives.fetch_add(1, std::memory_order_relaxed);
      if (n > 1)
        core.d2d_bytes.fetch_add(2 * payload, std::memory_order_relaxed);
    }
    st.deposits.clear();
    st.round += 1;
  }

  MeshConfig config_;
  std::vector<std::unique_ptr<Core>> cores_;
  std::atomic<std::uint64_t> next_buffer_id_{1};

  std::mutex collective_m_;
  std::condition_variable collective_cv_;
  std::map<std::vector<std::size_t>, GroupState> collectives_;

  std::size_t gate_limit_ = 0;  // 0: uncapped
  std::mutex gate_m_;
  std::condition_variable gate_cv_;
  std::size_t gate_active_ = 0;
};

inline DeviceBuffer CoreExec::alloc_f32(std::vector<std::size_t> shape) {
  auto s = mesh_->new_storage(core_, Dtype::F32, std::move(shape));
  return DeviceBuffer(std::move(s));
}

inline DeviceBuffer CoreExec::alloc_u32(std::vector<std::size_t> shape) {
  auto s = mesh_->new_storage(core_, Dtype::U32, std::move(shape));
  return DeviceBuffer(std::move(s));
}

inline Mesh mesh_create(MeshConfig config) { return Mesh(std::move(config)); }

}  // namespace podracer
