#include "nsk/nn.hpp"

#include <algorithm>
#include <cmath>

namespace nsk::nn {

TensorPtr xavier_uniform(const PoolPtr& pool, std::size_t rows, std::size_t cols,
                         std::mt19937_64& rng) {
  if (rows == 0 || cols == 0) throw RuntimeError("xavier_uniform needs positive dimensions");
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  auto t = make_tensor(pool, {rows, cols});
  const float hi = static_cast<float>(a);
  for (float& v : t->data()) v = std::clamp(static_cast<float>(dist(rng)), -hi, hi);
  return t;
}

TensorPtr xavier_uniform_init(const PoolPtr& pool, std::size_t rows, std::size_t cols,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return xavier_uniform(pool, rows, cols, rng);
}

ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
  return ad::bias_add(ad::matmul_t(x, w), b);
}

// ---------------------------------------------------------------------------

void ParamGroup::add(const TensorPtr& param) {
  if (!param || !param->is_parameter()) throw RuntimeError("only parameters can join a group");
  std::lock_guard lock(mu_);
  auto [it, inserted] = state_.try_emplace(param.get());
  if (inserted || it->second.param.expired()) {
    it->second = State{param, {}, {}};
    if (inserted) order_.push_back(param.get());
  }
}

std::vector<TensorPtr> ParamGroup::live() {
  std::lock_guard lock(mu_);
  std::vector<TensorPtr> out;
  std::vector<const Tensor*> kept;
  for (const Tensor* key : order_) {
    auto it = state_.find(key);
    if (TensorPtr p = it->second.param.lock()) {
      out.push_back(std::move(p));
      kept.push_back(key);
    } else {
      state_.erase(it);
    }
  }
  order_ = std::move(kept);
  return out;
}

std::size_t ParamGroup::size() { return live().size(); }

std::vector<std::pair<TensorPtr, ParamGroup::State*>> ParamGroup::prepare(GradCache& cache) {
  std::vector<TensorPtr> params = live();
  std::vector<std::pair<TensorPtr, State*>> out;
  std::lock_guard lock(mu_);
  for (TensorPtr& p : params) {
    const std::string name = p->param_name();
    if (!cache.contains(name)) throw RuntimeError("no gradient for parameter '" + name + "'");
    State& s = state_.at(p.get());
    if (s.m.size() != p->numel()) {
      s.m.assign(p->numel(), 0.0);
      s.v.assign(p->numel(), 0.0);
    }
    out.emplace_back(std::move(p), &s);
  }
  return out;
}

void ParamGroup::sgd_step(GradCache& cache, double lr, double momentum) {
  auto params = prepare(cache);
  for (auto& [p, s] : params) {
    auto g = cache.span(p->param_name());
    auto w = p->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      s->m[i] = momentum * s->m[i] + g[i];
      w[i] = static_cast<float>(w[i] - lr * s->m[i]);
    }
  }
  ++steps_;
}

void ParamGroup::adamw_step(GradCache& cache, const Hyperparams& hp) {
  auto params = prepare(cache);
  ++steps_;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(steps_));
  for (auto& [p, s] : params) {
    auto g = cache.span(p->param_name());
    auto w = p->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double wi = w[i];
      wi -= hp.learning_rate * hp.weight_decay * wi;
      s->m[i] = hp.beta1 * s->m[i] + (1.0 - hp.beta1) * g[i];
      s->v[i] = hp.beta2 * s->v[i] + (1.0 - hp.beta2) * static_cast<double>(g[i]) * g[i];
      double mh = s->m[i] / c1;
      double vh = s->v[i] / c2;
      wi -= hp.learning_rate * mh / (std::sqrt(vh) + hp.epsilon);
      w[i] = static_cast<float>(wi);
    }
  }
}

double clip_grad_norm(GradCache& cache, double max_norm) {
  if (!(max_norm > 0.0)) throw RuntimeError("clip_grad_norm needs a positive maximum norm");
  double sq = 0.0;
  for (const std::string& name : cache.names()) {
    for (float g : cache.span(name)) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  cache.scale_all(scale);
  return scale;
}

}  // namespace nsk::nn
