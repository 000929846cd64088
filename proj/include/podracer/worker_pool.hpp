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

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "podracer/common.hpp"

namespace podracer {

/// Fixed pool of native worker threads. parallel_for splits [0, n) into one
/// contiguous block per worker (static partitioning, so which worker steps
/// which item is deterministic) and blocks the caller until every block is
/// done. Safe to call from several threads at once; each call completes
/// independently.
class WorkerPool {
 public:
  explicit WorkerPool(std::size_t num_workers) {
    if (num_workers == 0) throw ConfigError("worker pool needs at least one worker");
    workers_.reserve(num_workers);
    for (std::size_t i = 0; i < num_workers; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~WorkerPool() {
    {
      std::lock_guard lk(m_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const { return workers_.size(); }

  void parallel_for(std::size_t n,
                    const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const std::size_t w = std::min(workers_.size(), n);

    struct Job {
      std::mutex m;
      std::condition_variable done_cv;
      std::size_t pending = 0;
    } job;
    job.pending = w;

    {
      std::lock_guard lk(m_);
      for (std::size_t i = 0; i < w; ++i) {
        const std::size_t begin = i * n / w;
        const std::size_t end = (i + 1) * n / w;
        tasks_.push_back([&body, &job, begin, end] {
          body(begin, end);
          // notify while holding the lock: the caller may destroy `job`
          // the moment it observes pending == 0
          std::lock_guard jl(job.m);
          --job.pending;
          job.done_cv.notify_one();
        });
      }
    }
    cv_.notify_all();

    std::unique_lock jl(job.m);
    job.done_cv.wait(jl, [&] { return job.pending == 0; });
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace podracer
