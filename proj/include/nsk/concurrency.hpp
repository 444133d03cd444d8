#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "nsk/error.hpp"

namespace nsk {

// Join point for a set of tasks. Every task runs on its own thread; join()
// waits for all of them and rethrows the first captured failure, tagged with
// the source line of the task that raised it.
class FinishScope {
 public:
  FinishScope() = default;
  FinishScope(const FinishScope&) = delete;
  FinishScope& operator=(const FinishScope&) = delete;
  ~FinishScope();

  void spawn(std::function<void()> task, int line = 0);
  void join();

  std::size_t pending() const noexcept { return pending_.load(); }
  std::size_t spawned() const noexcept { return threads_.size(); }

 private:
  void record_failure(std::exception_ptr error, int line);

  std::vector<std::thread> threads_;
  std::atomic<std::size_t> pending_{0};
  std::mutex mu_;
  std::exception_ptr first_error_;
  int first_error_line_ = 0;
  bool joined_ = false;
};

// Named mutexes, one per storage key, created on first use and kept for the
// registry's lifetime.
class LockRegistry {
 public:
  std::mutex& lock_for(const std::string& key);
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::unique_ptr<std::mutex>> locks_;
};

// Runs `update` while holding the key's lock, so a read-modify-write on that
// key is atomic with respect to every other locked_assign on it.
template <class F>
decltype(auto) locked_assign(LockRegistry& registry, const std::string& key, F&& update) {
  std::lock_guard guard(registry.lock_for(key));
  return std::forward<F>(update)();
}

// Bounded multi-producer queue fed by W workers that claim batch indices
// 0..count-1 from a shared counter. Items carry their index; with W > 1 they
// may arrive out of order. A loader failure poisons the queue: batches that
// were already produced are still delivered, then next() rethrows.
template <class T>
class PrefetchQueue {
 public:
  struct Item {
    std::size_t index;
    T value;
  };
  using Loader = std::function<T(std::size_t)>;

  PrefetchQueue(Loader loader, std::size_t count, std::size_t workers, std::size_t capacity)
      : loader_(std::move(loader)), count_(count), capacity_(capacity) {
    if (workers == 0) throw RuntimeError("prefetch needs at least one worker");
    if (capacity == 0) throw RuntimeError("prefetch capacity must be at least 1");
    threads_.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) threads_.emplace_back([this] { work(); });
  }

  PrefetchQueue(const PrefetchQueue&) = delete;
  PrefetchQueue& operator=(const PrefetchQueue&) = delete;

  ~PrefetchQueue() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    not_full_.notify_all();
    not_empty_.notify_all();
    for (auto& t : threads_) t.join();
  }

  // Next ready batch; std::nullopt once every batch has been delivered.
  std::optional<Item> next() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !ready_.empty() || drained(); });
    if (!ready_.empty()) {
      Item item = std::move(ready_.front());
      ready_.pop_front();
      ++delivered_;
      not_full_.notify_one();
      return item;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
  }

  std::size_t count() const noexcept { return count_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t buffered() const {
    std::lock_guard lock(mu_);
    return ready_.size();
  }

 private:
  // No more items can arrive.
  bool drained() const { return in_flight_ == 0 && (claimed_ >= count_ || error_ || stop_); }

  void work() {
    for (;;) {
      std::size_t index;
      {
        std::lock_guard lock(mu_);
        if (stop_ || error_ || claimed_ >= count_) break;
        index = claimed_++;
        ++in_flight_;
      }
      std::optional<T> value;
      try {
        value.emplace(loader_(index));
      } catch (...) {
        std::lock_guard lock(mu_);
        if (!error_) error_ = std::current_exception();
        --in_flight_;
        not_empty_.notify_all();
        not_full_.notify_all();
        break;
      }
      std::unique_lock lock(mu_);
      not_full_.wait(lock, [&] { return ready_.size() < capacity_ || stop_; });
      if (!stop_) ready_.push_back(Item{index, std::move(*value)});
      --in_flight_;
      not_empty_.notify_all();
    }
    std::lock_guard lock(mu_);
    not_empty_.notify_all();
  }

  Loader loader_;
  const std::size_t count_;
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<Item> ready_;
  std::size_t claimed_ = 0;
  std::size_t in_flight_ = 0;
  std::size_t delivered_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace nsk
