#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "nsk/error.hpp"

namespace nsk {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t numel(const Shape& shape);

// Flat float storage of fixed capacity. Fresh buffers are zero-filled;
// buffers handed out by the pool keep whatever their previous owner wrote.
class Buffer {
 public:
  enum class Origin { Fresh, Pooled };

  explicit Buffer(std::size_t capacity);

  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;

  std::size_t capacity() const noexcept { return capacity_; }
  Origin origin() const noexcept { return origin_; }
  float* data() noexcept { return data_.get(); }
  const float* data() const noexcept { return data_.get(); }
  std::span<float> span() noexcept { return {data_.get(), capacity_}; }
  std::span<const float> span() const noexcept { return {data_.get(), capacity_}; }

 private:
  friend class Pool;
  std::size_t capacity_;
  std::unique_ptr<float[]> data_;
  Origin origin_ = Origin::Fresh;
  bool in_pool_ = false;
};

using BufferPtr = std::shared_ptr<Buffer>;

struct PoolStats {
  std::uint64_t fresh_allocations = 0;
  std::uint64_t pool_hits = 0;
  std::uint64_t releases = 0;
};

// Size-keyed free lists: exact element count -> LIFO stack of buffers.
// Thread-safe. When disabled, every acquire allocates and every release frees.
class Pool {
 public:
  explicit Pool(bool enabled = true) : enabled_(enabled) {}

  Pool(const Pool&) = delete;
  Pool& operator=(const Pool&) = delete;

  BufferPtr acquire(std::size_t numel);
  void release(BufferPtr buffer);

  PoolStats stats() const;
  bool enabled() const noexcept { return enabled_; }

  std::size_t free_count(std::size_t capacity) const;
  std::size_t free_total() const;
  // Buffers handed out and not yet released.
  std::size_t outstanding() const;

  // Fill released buffers with a signalling sentinel so reads of stale
  // pooled memory are detectable.
  void set_poison(bool on) { poison_ = on; }
  static float poison_value();
  static bool is_poison(float v);

 private:
  bool enabled_;
  std::atomic<bool> poison_{false};
  mutable std::mutex mu_;
  std::map<std::size_t, std::vector<BufferPtr>> free_lists_;
  PoolStats stats_;
  std::size_t outstanding_ = 0;
};

using PoolPtr = std::shared_ptr<Pool>;

// Rank-1 or rank-2 float tensor over a pooled buffer. The buffer returns to
// its pool when the tensor is destroyed.
class Tensor {
 public:
  Tensor(PoolPtr pool, Shape shape);
  ~Tensor();

  Tensor(const Tensor&) = delete;
  Tensor& operator=(const Tensor&) = delete;

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return numel_; }
  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.back(); }

  std::span<float> data() noexcept { return {buffer_->data(), numel_}; }
  std::span<const float> data() const noexcept { return {buffer_->data(), numel_}; }
  float& at(std::size_t r, std::size_t c) { return buffer_->data()[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const { return buffer_->data()[r * cols() + c]; }

  const Buffer& buffer() const noexcept { return *buffer_; }
  const PoolPtr& pool() const noexcept { return pool_; }

  bool is_parameter() const noexcept { return parameter_; }
  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }
  std::string param_name() const;
  // Marks as trainable; `provisional` names may be replaced once by bind_name.
  void make_parameter(std::string name, bool provisional);
  // Gives a provisional parameter its first bound storage key.
  void bind_name(const std::string& key);

 private:
  PoolPtr pool_;
  Shape shape_;
  std::size_t numel_;
  BufferPtr buffer_;
  bool parameter_ = false;
  bool requires_grad_ = false;
  bool provisional_name_ = false;
  mutable std::mutex name_mu_;
  std::string param_name_;
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(const PoolPtr& pool, Shape shape);
TensorPtr make_tensor(const PoolPtr& pool, Shape shape, std::span<const float> values);
TensorPtr full(const PoolPtr& pool, Shape shape, float value);

enum class ElementwiseKind { Add, Sub, Hadamard, ScalarAdd, ScalarMul, Relu, Sigmoid, Tanh, Neg };

namespace ops {

// y = x · wᵀ with x m×k and w n×k; accumulates in double.
TensorPtr matmul_t(const Tensor& x, const Tensor& w);
// y = a · b with a m×k and b k×n.
TensorPtr matmul(const Tensor& a, const Tensor& b);
// y = aᵀ · b with a k×m and b k×n.
TensorPtr matmul_tn(const Tensor& a, const Tensor& b);

// Binary kinds need `b` of identical shape; scalar kinds use `scalar`; unary
// kinds ignore both.
TensorPtr elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b = nullptr,
                      double scalar = 0.0);

TensorPtr add(const Tensor& a, const Tensor& b);
TensorPtr sub(const Tensor& a, const Tensor& b);
TensorPtr hadamard(const Tensor& a, const Tensor& b);
TensorPtr scalar_add(const Tensor& a, double s);
TensorPtr scalar_mul(const Tensor& a, double s);
TensorPtr neg(const Tensor& a);
TensorPtr relu(const Tensor& a);
TensorPtr sigmoid(const Tensor& a);
TensorPtr tanh(const Tensor& a);

// x (m×n) plus bias b ([n]) on every row.
TensorPtr bias_add(const Tensor& x, const Tensor& b);
// Column sums of a rank-2 tensor as shape [n].
TensorPtr column_sum(const Tensor& x);

TensorPtr onehot(const Tensor& indices, std::size_t classes);
TensorPtr copy(const Tensor& a);
// Row-wise softmax with max subtraction.
TensorPtr softmax_rows(const Tensor& logits);

// dst += src (same numel).
void accumulate(Tensor& dst, const Tensor& src);

}  // namespace ops

// Per-parameter gradient storage, reused across iterations.
class GradCache {
 public:
  void accumulate(const std::string& param, const Tensor& grad);
  // Creates a zero entry if `param` has none yet.
  void ensure(const std::string& param, const Shape& shape);
  void zero_after_step();

  bool contains(const std::string& param) const;
  // Copy of the cached gradient; throws RuntimeError when missing.
  std::vector<float> values(const std::string& param) const;
  Shape shape(const std::string& param) const;
  std::vector<std::string> names() const;
  std::size_t size() const;
  bool dirty(const std::string& param) const;

  // Direct mutable access for optimizers and clipping; caller serializes.
  std::span<float> span(const std::string& param);
  void scale_all(double factor);

 private:
  struct Entry {
    Shape shape;
    std::unique_ptr<Buffer> buffer;
  };
  mutable std::mutex mu_;
  std::map<std::string, Entry> grads_;
  std::unordered_set<std::string> dirty_;
};

}  // namespace nsk
