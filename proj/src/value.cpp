#include "nsk/value.hpp"

#include <charconv>
#include <cmath>
#include <mutex>

namespace nsk {

const char* type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "none";
    case 1: return "number";
    case 2: return "bool";
    case 3: return "string";
    case 4: return "tensor";
    case 5: return "object";
    default: return "handle";
  }
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string format_float(float v) {
  if (v == std::floor(v) && std::abs(v) < 1e7f) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_tensor(const Tensor& t) {
  auto row = [&](std::size_t r) {
    std::string s = "[";
    for (std::size_t c = 0; c < t.cols(); ++c) {
      if (c) s += ", ";
      s += format_float(t.at(r, c));
    }
    return s + "]";
  };
  if (t.rank() == 1) return row(0);
  std::string s = "[";
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (r) s += ", ";
    s += row(r);
  }
  return s + "]";
}

}  // namespace

std::string display(const Value& v) {
  struct Visitor {
    std::string operator()(None) const { return "none"; }
    std::string operator()(double d) const { return format_number(d); }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(const TensorPtr& t) const { return format_tensor(*t); }
    std::string operator()(const ObjectPtr& o) const { return "<" + o->name() + ">"; }
    std::string operator()(const NativePtr& h) const { return "<" + h->kind() + ">"; }
  };
  return std::visit(Visitor{}, v);
}

std::optional<Value> Bindings::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

bool Bindings::contains(const std::string& key) const {
  std::shared_lock lock(mu_);
  return map_.count(key) != 0;
}

bool Bindings::set(const std::string& key, Value value) {
  std::unique_lock lock(mu_);
  auto [it, created] = map_.try_emplace(key, std::move(value));
  if (!created) {
    // the old value is destroyed outside the lock
    Value old = std::move(it->second);
    it->second = std::move(value);
    lock.unlock();
  }
  return created;
}

std::vector<std::string> Bindings::keys() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  out.reserve(map_.size());
  for (const auto& [k, _] : map_) out.push_back(k);
  return out;
}

std::size_t Bindings::size() const {
  std::shared_lock lock(mu_);
  return map_.size();
}

Value Scope::take_return() {
  if (!return_slot_) return None{};
  Value v = std::move(*return_slot_);
  return_slot_.reset();
  return v;
}

}  // namespace nsk
