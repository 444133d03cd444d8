#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "nsk/tensor.hpp"

namespace nsk {

struct None {
  bool operator==(const None&) const = default;
};

class ObjectInstance;
class ClassRecord;

// Host-side resource exposed to scripts (datasets, batches, prefetch queues).
class NativeHandle {
 public:
  virtual ~NativeHandle() = default;
  virtual std::string kind() const = 0;
};

using ObjectPtr = std::shared_ptr<ObjectInstance>;
using NativePtr = std::shared_ptr<NativeHandle>;

using Value = std::variant<None, double, bool, std::string, TensorPtr, ObjectPtr, NativePtr>;

const char* type_name(const Value& v);
std::string display(const Value& v);
std::string format_number(double v);

// Storage keyed by fully-qualified names, safe for concurrent tasks.
class Bindings {
 public:
  std::optional<Value> get(const std::string& key) const;
  bool contains(const std::string& key) const;
  // Returns true when the key did not exist before.
  bool set(const std::string& key, Value value);
  std::vector<std::string> keys() const;
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Value> map_;
};

// One function invocation, async task, or the top level. Task scopes have a
// parent (the scope that ran the finish block) that reads fall through to.
class Scope {
 public:
  explicit Scope(std::string id, Scope* parent = nullptr)
      : id_(std::move(id)), parent_(parent) {}

  const std::string& id() const noexcept { return id_; }
  Scope* parent() const noexcept { return parent_; }
  std::string key(const std::string& name) const { return id_ + "." + name; }
  Bindings& bindings() noexcept { return bindings_; }
  const Bindings& bindings() const noexcept { return bindings_; }

  // Slot written by `return` in a callee and read by the pending call.
  void deliver(Value v) { return_slot_ = std::move(v); }
  Value take_return();

  // Finish blocks currently running tasks against this scope.
  std::atomic<int> active_tasks{0};

 private:
  std::string id_;
  Scope* parent_;
  Bindings bindings_;
  std::optional<Value> return_slot_;
};

class ObjectInstance {
 public:
  ObjectInstance(std::string name, const ClassRecord* cls) : name_(std::move(name)), class_(cls) {}

  const std::string& name() const noexcept { return name_; }
  const ClassRecord& class_record() const noexcept { return *class_; }
  std::string key(const std::string& attribute) const { return name_ + "." + attribute; }
  Bindings& attributes() noexcept { return attributes_; }

 private:
  std::string name_;
  const ClassRecord* class_;
  Bindings attributes_;
};

}  // namespace nsk
