#include "nsk/concurrency.hpp"

namespace nsk {

FinishScope::~FinishScope() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
}

void FinishScope::spawn(std::function<void()> task, int line) {
  if (joined_) throw RuntimeError("finish scope already joined");
  ++pending_;
  threads_.emplace_back([this, task = std::move(task), line] {
    try {
      task();
    } catch (...) {
      record_failure(std::current_exception(), line);
    }
    --pending_;
  });
}

void FinishScope::record_failure(std::exception_ptr error, int line) {
  std::lock_guard lock(mu_);
  if (!first_error_) {
    first_error_ = std::move(error);
    first_error_line_ = line;
  }
}

void FinishScope::join() {
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  joined_ = true;
  if (!first_error_) return;
  try {
    std::rethrow_exception(first_error_);
  } catch (Error& e) {
    if (e.line() == 0) e.set_position(first_error_line_);
    throw;
  }
}

std::mutex& LockRegistry::lock_for(const std::string& key) {
  std::lock_guard lock(mu_);
  auto& slot = locks_[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::size_t LockRegistry::size() const {
  std::lock_guard lock(mu_);
  return locks_.size();
}

}  // namespace nsk
