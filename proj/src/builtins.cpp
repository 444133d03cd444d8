#include <chrono>
#include <cmath>
#include <thread>

#include "eval_support.hpp"
#include "nsk/data.hpp"
#include "nsk/runtime.hpp"

namespace nsk {

namespace {

using Args = std::vector<Result>;

struct DatasetHandle : NativeHandle {
  std::unique_ptr<data::Dataset> dataset;
  std::string kind() const override { return "dataset"; }
};

struct BatchHandle : NativeHandle {
  data::Batch batch;
  std::string kind() const override { return "batch"; }
};

struct QueueHandle : NativeHandle {
  std::unique_ptr<PrefetchQueue<Value>> queue;
  std::string kind() const override { return "prefetch queue"; }
};

std::string arg_label(const char* fn, std::size_t i) {
  return std::string(fn) + "() argument " + std::to_string(i + 1);
}

double number(const Args& a, std::size_t i, const char* fn) {
  if (auto* d = std::get_if<double>(&a[i].value)) return *d;
  throw TypeError(arg_label(fn, i) + " must be a number, got " + type_name(a[i].value));
}

std::size_t count(const Args& a, std::size_t i, const char* fn, bool allow_zero = false) {
  double d = number(a, i, fn);
  if (d != std::floor(d) || d < (allow_zero ? 0 : 1) || d > 1e12) {
    throw RuntimeError(arg_label(fn, i) + " must be a " +
                       (allow_zero ? "non-negative" : "positive") + " integer, got " +
                       format_number(d));
  }
  return static_cast<std::size_t>(d);
}

bool flag(const Args& a, std::size_t i, const char* fn) {
  if (auto* b = std::get_if<bool>(&a[i].value)) return *b;
  return number(a, i, fn) != 0.0;
}

const std::string& text(const Args& a, std::size_t i, const char* fn) {
  if (auto* s = std::get_if<std::string>(&a[i].value)) return *s;
  throw TypeError(arg_label(fn, i) + " must be a string, got " + type_name(a[i].value));
}

const TensorPtr& tensor(const Args& a, std::size_t i, const char* fn) {
  if (auto* t = std::get_if<TensorPtr>(&a[i].value)) return *t;
  throw TypeError(arg_label(fn, i) + " must be a tensor, got " + type_name(a[i].value));
}

ad::Var var(const Args& a, std::size_t i, const char* fn) {
  return detail::as_var(a[i], arg_label(fn, i));
}

template <class H>
H& handle(const Args& a, std::size_t i, const char* fn, const char* kind) {
  if (auto* h = std::get_if<NativePtr>(&a[i].value)) {
    if (auto* typed = dynamic_cast<H*>(h->get())) return *typed;
  }
  throw TypeError(arg_label(fn, i) + " must be a " + kind + ", got " +
                  (std::holds_alternative<NativePtr>(a[i].value)
                       ? std::get<NativePtr>(a[i].value)->kind()
                       : std::string(type_name(a[i].value))));
}

Result none() { return {None{}, nullptr}; }
Result num(double d) { return {d, nullptr}; }
Result traced(ad::Var v) { return {std::move(v.value), std::move(v.node)}; }
Result source(TensorPtr t) { return traced(ad::source(std::move(t))); }

Shape shape_from(const Args& a, std::size_t first, std::size_t n, const char* fn) {
  Shape s;
  for (std::size_t i = first; i < first + n; ++i) s.push_back(count(a, i, fn));
  return s;
}

// ---- core -------------------------------------------------------------------

Result b_print(Frame& f, Args& a) {
  std::string line;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) line += ' ';
    line += display(a[i].value);
  }
  f.interp->write_line(line);
  return none();
}

Result b_str(Frame&, Args& a) { return {display(a[0].value), nullptr}; }

Result b_zeros(Frame& f, Args& a) {
  return source(full(f.interp->pool(), shape_from(a, 0, a.size(), "zeros"), 0.0f));
}

Result b_ones(Frame& f, Args& a) {
  return source(full(f.interp->pool(), shape_from(a, 0, a.size(), "ones"), 1.0f));
}

Result b_full(Frame& f, Args& a) {
  float v = static_cast<float>(number(a, 0, "full"));
  return source(full(f.interp->pool(), shape_from(a, 1, a.size() - 1, "full"), v));
}

Result b_matrix(Frame& f, Args& a) {
  std::size_t r = count(a, 0, "matrix"), c = count(a, 1, "matrix");
  if (a.size() - 2 != r * c) {
    throw RuntimeError("matrix(" + std::to_string(r) + ", " + std::to_string(c) + ") needs " +
                       std::to_string(r * c) + " values, got " + std::to_string(a.size() - 2));
  }
  std::vector<float> v;
  for (std::size_t i = 2; i < a.size(); ++i) v.push_back(static_cast<float>(number(a, i, "matrix")));
  return source(make_tensor(f.interp->pool(), {r, c}, v));
}

Result b_vector(Frame& f, Args& a) {
  std::vector<float> v;
  for (std::size_t i = 0; i < a.size(); ++i) v.push_back(static_cast<float>(number(a, i, "vector")));
  return source(make_tensor(f.interp->pool(), {v.size()}, v));
}

Result b_parameter(Frame& f, Args& a) {
  TensorPtr t = tensor(a, 0, "parameter");
  f.interp->register_parameter(t);
  return {t, nullptr};
}

Result b_xavier(Frame& f, Args& a) {
  std::size_t r = count(a, 0, "xavier_uniform"), c = count(a, 1, "xavier_uniform");
  TensorPtr t = f.interp->with_rng(
      [&](std::mt19937_64& rng) { return nn::xavier_uniform(f.interp->pool(), r, c, rng); });
  f.interp->register_parameter(t);
  return {t, nullptr};
}

Result b_item(Frame&, Args& a) {
  const Tensor& t = *tensor(a, 0, "item");
  if (a.size() == 1) {
    if (t.numel() != 1) {
      throw ShapeError("item() of a tensor with shape " + shape_string(t.shape()) +
                       " needs an index");
    }
    return num(t.data()[0]);
  }
  std::size_t i = count(a, 1, "item", true);
  if (a.size() == 2) {
    if (i >= t.numel()) throw ShapeError("item index " + std::to_string(i) + " out of range");
    return num(t.data()[i]);
  }
  std::size_t j = count(a, 2, "item", true);
  if (t.rank() != 2 || i >= t.rows() || j >= t.cols()) {
    throw ShapeError("item index (" + std::to_string(i) + ", " + std::to_string(j) +
                     ") out of range for shape " + shape_string(t.shape()));
  }
  return num(t.at(i, j));
}

Result b_rows(Frame&, Args& a) { return num(static_cast<double>(tensor(a, 0, "rows")->rows())); }
Result b_cols(Frame&, Args& a) { return num(static_cast<double>(tensor(a, 0, "cols")->cols())); }

Result b_mean(Frame&, Args& a) {
  const Tensor& t = *tensor(a, 0, "mean");
  double s = 0;
  for (float v : t.data()) s += v;
  return num(s / static_cast<double>(t.numel()));
}

std::size_t row_argmax(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c) {
    if (t.at(r, c) > t.at(r, best)) best = c;
  }
  return best;
}

Result b_argmax(Frame& f, Args& a) {
  const Tensor& t = *tensor(a, 0, "argmax");
  if (t.rank() == 1) return num(static_cast<double>(row_argmax(t, 0)));
  auto out = make_tensor(f.interp->pool(), {t.rows()});
  for (std::size_t r = 0; r < t.rows(); ++r) out->data()[r] = static_cast<float>(row_argmax(t, r));
  return source(out);
}

Result b_accuracy(Frame&, Args& a) {
  const Tensor& z = *tensor(a, 0, "accuracy");
  const Tensor& y = *tensor(a, 1, "accuracy");
  if (z.rank() != 2 || y.numel() != z.rows()) {
    throw ShapeError("accuracy needs logits [m×c] and labels [m], got " + shape_string(z.shape()) +
                     " and " + shape_string(y.shape()));
  }
  std::size_t hits = 0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    hits += static_cast<float>(row_argmax(z, r)) == y.data()[r];
  }
  return num(static_cast<double>(hits) / static_cast<double>(z.rows()));
}

template <double (*F)(double)>
Result b_math(Frame&, Args& a) {
  return num(F(number(a, 0, "math")));
}

double floor_of(double v) { return std::floor(v); }
double sqrt_of(double v) { return std::sqrt(v); }
double exp_of(double v) { return std::exp(v); }
double log_of(double v) { return std::log(v); }
double abs_of(double v) { return std::abs(v); }

Result b_min(Frame&, Args& a) { return num(std::min(number(a, 0, "min"), number(a, 1, "min"))); }
Result b_max(Frame&, Args& a) { return num(std::max(number(a, 0, "max"), number(a, 1, "max"))); }

Result b_sleep(Frame&, Args& a) {
  double ms = number(a, 0, "sleep_ms");
  if (ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
  return none();
}

Result b_lowerings(Frame& f, Args&) { return num(static_cast<double>(f.interp->lowering_count())); }

Result b_is_end(Frame&, Args& a) { return {std::holds_alternative<None>(a[0].value), nullptr}; }

// ---- layers and losses ------------------------------------------------------

Result b_linear(Frame&, Args& a) {
  return traced(nn::linear(var(a, 0, "linear"), var(a, 1, "linear"), var(a, 2, "linear")));
}
Result b_relu(Frame&, Args& a) { return traced(ad::relu(var(a, 0, "relu"))); }
Result b_sigmoid(Frame&, Args& a) { return traced(ad::sigmoid(var(a, 0, "sigmoid"))); }
Result b_tanh(Frame&, Args& a) { return traced(ad::tanh(var(a, 0, "tanh"))); }
Result b_onehot(Frame&, Args& a) {
  return traced(ad::onehot(var(a, 0, "onehot"), count(a, 1, "onehot")));
}
Result b_cross_entropy(Frame&, Args& a) {
  return traced(ad::cross_entropy(var(a, 0, "cross_entropy"), var(a, 1, "cross_entropy")));
}
Result b_sum_loss(Frame&, Args& a) { return traced(ad::sum_loss(var(a, 0, "sum_loss"))); }
Result b_mse_loss(Frame&, Args& a) {
  return traced(ad::mse_loss(var(a, 0, "mse_loss"), var(a, 1, "mse_loss")));
}

// ---- training ---------------------------------------------------------------

Result b_backward(Frame& f, Args&) {
  auto live = f.interp->params().live();
  ad::backward(thread_tape(), f.interp->grad_cache(), live);
  return none();
}

Result b_zero_grad(Frame& f, Args&) {
  f.interp->grad_cache().zero_after_step();
  return none();
}

Result b_tape_clear(Frame&, Args&) {
  thread_tape().clear();
  return none();
}

Result b_tape_depth(Frame&, Args&) { return num(static_cast<double>(thread_tape().depth())); }

Result b_sgd_step(Frame& f, Args& a) {
  double lr = number(a, 0, "sgd_step");
  double momentum = a.size() > 1 ? number(a, 1, "sgd_step") : 0.0;
  f.interp->params().sgd_step(f.interp->grad_cache(), lr, momentum);
  f.interp->grad_cache().zero_after_step();
  return none();
}

Result b_adamw_step(Frame& f, Args& a) {
  nn::Hyperparams hp;
  hp.learning_rate = number(a, 0, "adamw_step");
  if (a.size() > 1) hp.weight_decay = number(a, 1, "adamw_step");
  f.interp->params().adamw_step(f.interp->grad_cache(), hp);
  f.interp->grad_cache().zero_after_step();
  return none();
}

Result b_clip(Frame& f, Args& a) {
  return num(nn::clip_grad_norm(f.interp->grad_cache(), number(a, 0, "clip_grad_norm")));
}

Result b_grad(Frame& f, Args& a) {
  const TensorPtr& t = tensor(a, 0, "grad");
  if (!t->is_parameter()) throw RuntimeError("grad() needs a parameter");
  auto& cache = f.interp->grad_cache();
  std::string name = t->param_name();
  std::vector<float> g =
      cache.contains(name) ? cache.values(name) : std::vector<float>(t->numel(), 0.0f);
  return source(make_tensor(f.interp->pool(), t->shape(), g));
}

// ---- data -------------------------------------------------------------------

Result b_load_csv(Frame& f, Args& a) {
  Interpreter& in = *f.interp;
  auto table = data::load_csv(in.pool(), in.resolve_path(text(a, 0, "load_csv")),
                              text(a, 1, "load_csv"));
  std::size_t rows = table.labels->numel();
  std::size_t batch = a.size() > 2 ? count(a, 2, "load_csv") : rows;
  bool shuffle = a.size() > 3 ? flag(a, 3, "load_csv") : false;
  auto h = std::make_shared<DatasetHandle>();
  h->dataset = std::make_unique<data::Dataset>(std::move(table), batch, shuffle,
                                               in.options().seed, in.options().workers, 2);
  return {NativePtr(h), nullptr};
}

data::Dataset& dataset(Args& a, const char* fn) {
  return *handle<DatasetHandle>(a, 0, fn, "dataset").dataset;
}

Result b_start_epoch(Frame&, Args& a) {
  dataset(a, "start_epoch").start_epoch();
  return none();
}

Result b_next_batch(Frame&, Args& a) {
  auto b = dataset(a, "next_batch").next_batch();
  if (!b) return none();
  auto h = std::make_shared<BatchHandle>();
  h->batch = std::move(*b);
  return {NativePtr(h), nullptr};
}

Result b_features(Frame&, Args& a) {
  return source(handle<BatchHandle>(a, 0, "features", "batch").batch.features);
}
Result b_labels(Frame&, Args& a) {
  return source(handle<BatchHandle>(a, 0, "labels", "batch").batch.labels);
}
Result b_all_features(Frame&, Args& a) { return source(dataset(a, "all_features").table().features); }
Result b_all_labels(Frame&, Args& a) { return source(dataset(a, "all_labels").table().labels); }
Result b_num_batches(Frame&, Args& a) {
  return num(static_cast<double>(dataset(a, "num_batches").num_batches()));
}
Result b_num_rows(Frame&, Args& a) { return num(static_cast<double>(dataset(a, "num_rows").rows())); }

Result b_prefetch(Frame& f, Args& a) {
  Interpreter* in = f.interp;
  std::string name = text(a, 0, "prefetch");
  if (!in->function(name)) throw RuntimeError("prefetch: undefined function '" + name + "'");
  std::size_t n = count(a, 1, "prefetch", true);
  std::size_t workers = a.size() > 2 ? count(a, 2, "prefetch") : in->options().workers;
  std::size_t capacity = a.size() > 3 ? count(a, 3, "prefetch") : 2;
  auto h = std::make_shared<QueueHandle>();
  h->queue = std::make_unique<PrefetchQueue<Value>>(
      [in, name](std::size_t i) { return in->call(name, {static_cast<double>(i)}, true); }, n,
      workers, capacity);
  return {NativePtr(h), nullptr};
}

Result b_prefetch_next(Frame&, Args& a) {
  auto item = handle<QueueHandle>(a, 0, "prefetch_next", "prefetch queue").queue->next();
  if (!item) return none();
  return {std::move(item->value), nullptr};
}

constexpr std::size_t kMany = 1024;

}  // namespace

const std::unordered_map<std::string, BuiltinSpec>& builtin_table() {
  static const std::unordered_map<std::string, BuiltinSpec> table = {
      {"print", {0, kMany, b_print}},
      {"str", {1, 1, b_str}},
      {"zeros", {1, 2, b_zeros}},
      {"ones", {1, 2, b_ones}},
      {"full", {2, 3, b_full}},
      {"matrix", {2, kMany, b_matrix}},
      {"vector", {1, kMany, b_vector}},
      {"parameter", {1, 1, b_parameter}},
      {"xavier_uniform", {2, 2, b_xavier}},
      {"item", {1, 3, b_item}},
      {"rows", {1, 1, b_rows}},
      {"cols", {1, 1, b_cols}},
      {"mean", {1, 1, b_mean}},
      {"argmax", {1, 1, b_argmax}},
      {"accuracy", {2, 2, b_accuracy}},
      {"floor", {1, 1, b_math<floor_of>}},
      {"sqrt", {1, 1, b_math<sqrt_of>}},
      {"exp", {1, 1, b_math<exp_of>}},
      {"log", {1, 1, b_math<log_of>}},
      {"abs", {1, 1, b_math<abs_of>}},
      {"min", {2, 2, b_min}},
      {"max", {2, 2, b_max}},
      {"sleep_ms", {1, 1, b_sleep}},
      {"lowering_events", {0, 0, b_lowerings}},
      {"is_end", {1, 1, b_is_end}},
      {"linear", {3, 3, b_linear}},
      {"relu", {1, 1, b_relu}},
      {"sigmoid", {1, 1, b_sigmoid}},
      {"tanh", {1, 1, b_tanh}},
      {"onehot", {2, 2, b_onehot}},
      {"cross_entropy", {2, 2, b_cross_entropy}},
      {"sum_loss", {1, 1, b_sum_loss}},
      {"mse_loss", {2, 2, b_mse_loss}},
      {"backward", {0, 0, b_backward}},
      {"zero_grad", {0, 0, b_zero_grad}},
      {"tape_clear", {0, 0, b_tape_clear}},
      {"tape_depth", {0, 0, b_tape_depth}},
      {"sgd_step", {1, 2, b_sgd_step}},
      {"adamw_step", {1, 2, b_adamw_step}},
      {"clip_grad_norm", {1, 1, b_clip}},
      {"grad", {1, 1, b_grad}},
      {"load_csv", {2, 4, b_load_csv}},
      {"start_epoch", {1, 1, b_start_epoch}},
      {"next_batch", {1, 1, b_next_batch}},
      {"features", {1, 1, b_features}},
      {"labels", {1, 1, b_labels}},
      {"all_features", {1, 1, b_all_features}},
      {"all_labels", {1, 1, b_all_labels}},
      {"num_batches", {1, 1, b_num_batches}},
      {"num_rows", {1, 1, b_num_rows}},
      {"prefetch", {2, 4, b_prefetch}},
      {"prefetch_next", {1, 1, b_prefetch_next}},
  };
  return table;
}

}  // namespace nsk
