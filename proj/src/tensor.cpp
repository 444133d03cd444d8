#include "nsk/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <new>
#include <sstream>

namespace nsk {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Buffer::Buffer(std::size_t capacity) : capacity_(capacity) {
  try {
    data_ = std::make_unique<float[]>(capacity);
  } catch (const std::bad_alloc&) {
    throw OutOfMemory("out of memory allocating a buffer of " + std::to_string(capacity) +
                      " elements");
  }
}

// ---------------------------------------------------------------------------
// Pool

BufferPtr Pool::acquire(std::size_t numel) {
  if (numel == 0) throw RuntimeError("cannot allocate an empty buffer");
  {
    std::lock_guard lock(mu_);
    if (enabled_) {
      auto it = free_lists_.find(numel);
      if (it != free_lists_.end() && !it->second.empty()) {
        BufferPtr buf = std::move(it->second.back());
        it->second.pop_back();
        buf->in_pool_ = false;
        buf->origin_ = Buffer::Origin::Pooled;
        ++stats_.pool_hits;
        ++outstanding_;
        return buf;
      }
    }
  }
  auto buf = std::make_shared<Buffer>(numel);
  std::lock_guard lock(mu_);
  ++stats_.fresh_allocations;
  ++outstanding_;
  return buf;
}

void Pool::release(BufferPtr buffer) {
  if (!buffer) return;
  std::lock_guard lock(mu_);
  if (buffer->in_pool_) {
    throw RuntimeError("buffer of " + std::to_string(buffer->capacity()) +
                       " elements released twice");
  }
  if (poison_ && enabled_) std::fill(buffer->data(), buffer->data() + buffer->capacity(), poison_value());
  ++stats_.releases;
  --outstanding_;
  if (!enabled_) return;  // the last reference frees it
  buffer->in_pool_ = true;
  free_lists_[buffer->capacity()].push_back(std::move(buffer));
}

PoolStats Pool::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::size_t Pool::free_count(std::size_t capacity) const {
  std::lock_guard lock(mu_);
  auto it = free_lists_.find(capacity);
  return it == free_lists_.end() ? 0 : it->second.size();
}

std::size_t Pool::free_total() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [cap, list] : free_lists_) n += list.size();
  return n;
}

std::size_t Pool::outstanding() const {
  std::lock_guard lock(mu_);
  return outstanding_;
}

float Pool::poison_value() { return std::bit_cast<float>(std::uint32_t{0x7fa5a5a5}); }

bool Pool::is_poison(float v) {
  return std::bit_cast<std::uint32_t>(v) == std::uint32_t{0x7fa5a5a5};
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(PoolPtr pool, Shape shape)
    : pool_(std::move(pool)), shape_(std::move(shape)), numel_(nsk::numel(shape_)) {
  if (shape_.empty() || shape_.size() > 2) {
    throw ShapeError("tensors must have rank 1 or 2, got " + shape_string(shape_));
  }
  for (std::size_t d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape_));
  }
  buffer_ = pool_->acquire(numel_);
}

Tensor::~Tensor() {
  try {
    pool_->release(std::move(buffer_));
  } catch (...) {
  }
}

std::string Tensor::param_name() const {
  std::lock_guard lock(name_mu_);
  return param_name_;
}

void Tensor::make_parameter(std::string name, bool provisional) {
  std::lock_guard lock(name_mu_);
  parameter_ = true;
  requires_grad_ = true;
  provisional_name_ = provisional;
  param_name_ = std::move(name);
}

void Tensor::bind_name(const std::string& key) {
  std::lock_guard lock(name_mu_);
  if (parameter_ && provisional_name_) {
    param_name_ = key;
    provisional_name_ = false;
  }
}

TensorPtr make_tensor(const PoolPtr& pool, Shape shape) {
  return std::make_shared<Tensor>(pool, std::move(shape));
}

TensorPtr make_tensor(const PoolPtr& pool, Shape shape, std::span<const float> values) {
  auto t = make_tensor(pool, std::move(shape));
  if (values.size() != t->numel()) {
    throw ShapeError("expected " + std::to_string(t->numel()) + " values for shape " +
                     shape_string(t->shape()) + ", got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), t->data().begin());
  return t;
}

TensorPtr full(const PoolPtr& pool, Shape shape, float value) {
  auto t = make_tensor(pool, std::move(shape));
  std::fill(t->data().begin(), t->data().end(), value);
  return t;
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

namespace {

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " needs rank-2 operands, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class F>
TensorPtr map_unary(const Tensor& a, F f) {
  auto out = make_tensor(a.pool(), a.shape());
  auto src = a.data();
  auto dst = out->data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
TensorPtr map_binary(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_shape(a, b, op);
  auto out = make_tensor(a.pool(), a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out->data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

TensorPtr matmul_t(const Tensor& x, const Tensor& w) {
  require_rank2(x, "@");
  require_rank2(w, "@");
  if (x.cols() != w.cols()) {
    throw ShapeError("@: shape mismatch " + shape_string(x.shape()) + " @ " +
                     shape_string(w.shape()) + " (columns must agree)");
  }
  const std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  auto out = make_tensor(x.pool(), {m, n});
  const float* xp = x.data().data();
  const float* wp = w.data().data();
  float* yp = out->data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const float* xr = xp + i * k;
      const float* wr = wp + j * k;
      for (std::size_t c = 0; c < k; ++c) acc += static_cast<double>(xr[c]) * wr[c];
      yp[i * n + j] = static_cast<float>(acc);
    }
  }
  return out;
}

TensorPtr matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_tensor(a.pool(), {m, n});
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  float* yp = out->data().data();
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      double av = ap[i * k + c];
      const float* br = bp + c * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * br[j];
    }
    for (std::size_t j = 0; j < n; ++j) yp[i * n + j] = static_cast<float>(row[j]);
  }
  return out;
}

TensorPtr matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  auto out = make_tensor(a.pool(), {m, n});
  std::vector<double> acc(m * n, 0.0);
  const float* ap = a.data().data();
  const float* bp = b.data().data();
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < m; ++i) {
      double av = ap[r * m + i];
      const float* br = bp + r * n;
      for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += av * br[j];
    }
  }
  auto dst = out->data();
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
  return out;
}

TensorPtr elementwise(ElementwiseKind kind, const Tensor& a, const Tensor* b, double scalar) {
  auto need_b = [&](const char* op) -> const Tensor& {
    if (!b) throw RuntimeError(std::string(op) + " needs a second tensor operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseKind::Add:
      return map_binary(a, need_b("+"), "+", [](float x, float y) { return x + y; });
    case ElementwiseKind::Sub:
      return map_binary(a, need_b("-"), "-", [](float x, float y) { return x - y; });
    case ElementwiseKind::Hadamard:
      return map_binary(a, need_b("*"), "*", [](float x, float y) { return x * y; });
    case ElementwiseKind::ScalarAdd: {
      float s = static_cast<float>(scalar);
      return map_unary(a, [s](float x) { return x + s; });
    }
    case ElementwiseKind::ScalarMul: {
      float s = static_cast<float>(scalar);
      return map_unary(a, [s](float x) { return x * s; });
    }
    case ElementwiseKind::Relu:
      return map_unary(a, [](float x) { return x > 0.0f ? x : 0.0f; });
    case ElementwiseKind::Sigmoid:
      return map_unary(a, [](float x) {
        // split on sign so exp never overflows
        if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
        float e = std::exp(x);
        return e / (1.0f + e);
      });
    case ElementwiseKind::Tanh:
      return map_unary(a, [](float x) { return std::tanh(x); });
    case ElementwiseKind::Neg:
      return map_unary(a, [](float x) { return -x; });
  }
  throw RuntimeError("unknown elementwise kind");
}

TensorPtr add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Add, a, &b); }
TensorPtr sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseKind::Sub, a, &b); }
TensorPtr hadamard(const Tensor& a, const Tensor& b) {
  return elementwise(ElementwiseKind::Hadamard, a, &b);
}
TensorPtr scalar_add(const Tensor& a, double s) {
  return elementwise(ElementwiseKind::ScalarAdd, a, nullptr, s);
}
TensorPtr scalar_mul(const Tensor& a, double s) {
  return elementwise(ElementwiseKind::ScalarMul, a, nullptr, s);
}
TensorPtr neg(const Tensor& a) { return elementwise(ElementwiseKind::Neg, a); }
TensorPtr relu(const Tensor& a) { return elementwise(ElementwiseKind::Relu, a); }
TensorPtr sigmoid(const Tensor& a) { return elementwise(ElementwiseKind::Sigmoid, a); }
TensorPtr tanh(const Tensor& a) { return elementwise(ElementwiseKind::Tanh, a); }

TensorPtr bias_add(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || b.cols() != x.cols()) {
    throw ShapeError("bias of shape " + shape_string(b.shape()) + " does not fit input " +
                     shape_string(x.shape()));
  }
  auto out = make_tensor(x.pool(), x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  auto src = x.data();
  auto bias = b.data();
  auto dst = out->data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[i * cols + j] = src[i * cols + j] + bias[j];
  }
  return out;
}

TensorPtr column_sum(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  auto out = make_tensor(x.pool(), {cols});
  std::vector<double> acc(cols, 0.0);
  auto src = x.data();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) acc[j] += src[i * cols + j];
  }
  auto dst = out->data();
  for (std::size_t j = 0; j < cols; ++j) dst[j] = static_cast<float>(acc[j]);
  return out;
}

TensorPtr onehot(const Tensor& indices, std::size_t classes) {
  if (indices.rank() != 1) {
    throw ShapeError("onehot needs a rank-1 index tensor, got " + shape_string(indices.shape()));
  }
  if (classes == 0) throw RuntimeError("onehot needs at least one class");
  const std::size_t m = indices.numel();
  auto out = make_tensor(indices.pool(), {m, classes});
  auto dst = out->data();
  std::fill(dst.begin(), dst.end(), 0.0f);
  auto idx = indices.data();
  for (std::size_t i = 0; i < m; ++i) {
    float v = idx[i];
    if (!(v >= 0.0f) || v >= static_cast<float>(classes) || v != std::floor(v)) {
      throw RuntimeError("onehot: index " + std::to_string(v) + " at row " + std::to_string(i) +
                         " is not a class in [0, " + std::to_string(classes) + ")");
    }
    dst[i * classes + static_cast<std::size_t>(v)] = 1.0f;
  }
  return out;
}

TensorPtr copy(const Tensor& a) {
  auto out = make_tensor(a.pool(), a.shape());
  std::copy(a.data().begin(), a.data().end(), out->data().begin());
  return out;
}

TensorPtr softmax_rows(const Tensor& logits) {
  require_rank2(logits, "softmax");
  const std::size_t m = logits.rows(), c = logits.cols();
  auto out = make_tensor(logits.pool(), logits.shape());
  auto src = logits.data();
  auto dst = out->data();
  for (std::size_t i = 0; i < m; ++i) {
    const float* row = src.data() + i * c;
    float mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < c; ++j) {
      dst[i * c + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / total);
    }
  }
  return out;
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.numel() != src.numel()) {
    throw ShapeError("cannot accumulate " + shape_string(src.shape()) + " into " +
                     shape_string(dst.shape()));
  }
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace ops

// ---------------------------------------------------------------------------
// GradCache

void GradCache::accumulate(const std::string& param, const Tensor& grad) {
  std::lock_guard lock(mu_);
  auto it = grads_.find(param);
  if (it == grads_.end()) {
    Entry e{grad.shape(), std::make_unique<Buffer>(grad.numel())};
    it = grads_.emplace(param, std::move(e)).first;
  } else if (it->second.shape != grad.shape()) {
    throw ShapeError("gradient for '" + param + "' has shape " + shape_string(grad.shape()) +
                     " but the cache holds " + shape_string(it->second.shape));
  }
  float* d = it->second.buffer->data();
  auto s = grad.data();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] += s[i];
  dirty_.insert(param);
}

void GradCache::ensure(const std::string& param, const Shape& shape) {
  std::lock_guard lock(mu_);
  if (grads_.count(param)) return;
  grads_.emplace(param, Entry{shape, std::make_unique<Buffer>(nsk::numel(shape))});
}

void GradCache::zero_after_step() {
  std::lock_guard lock(mu_);
  for (auto& [name, e] : grads_) {
    std::fill(e.buffer->data(), e.buffer->data() + e.buffer->capacity(), 0.0f);
  }
  dirty_.clear();
}

bool GradCache::contains(const std::string& param) const {
  std::lock_guard lock(mu_);
  return grads_.count(param) != 0;
}

std::vector<float> GradCache::values(const std::string& param) const {
  std::lock_guard lock(mu_);
  auto it = grads_.find(param);
  if (it == grads_.end()) throw RuntimeError("no gradient for parameter '" + param + "'");
  auto s = it->second.buffer->span();
  return {s.begin(), s.end()};
}

Shape GradCache::shape(const std::string& param) const {
  std::lock_guard lock(mu_);
  auto it = grads_.find(param);
  if (it == grads_.end()) throw RuntimeError("no gradient for parameter '" + param + "'");
  return it->second.shape;
}

std::vector<std::string> GradCache::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [name, e] : grads_) out.push_back(name);
  return out;
}

std::size_t GradCache::size() const {
  std::lock_guard lock(mu_);
  return grads_.size();
}

bool GradCache::dirty(const std::string& param) const {
  std::lock_guard lock(mu_);
  return dirty_.count(param) != 0;
}

std::span<float> GradCache::span(const std::string& param) {
  std::lock_guard lock(mu_);
  auto it = grads_.find(param);
  if (it == grads_.end()) throw RuntimeError("no gradient for parameter '" + param + "'");
  return it->second.buffer->span();
}

void GradCache::scale_all(double factor) {
  std::lock_guard lock(mu_);
  for (auto& [name, e] : grads_) {
    float* d = e.buffer->data();
    for (std::size_t i = 0; i < e.buffer->capacity(); ++i) {
      d[i] = static_cast<float>(d[i] * factor);
    }
  }
}

}  // namespace nsk
