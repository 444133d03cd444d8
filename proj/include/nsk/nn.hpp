#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <vector>

#include "nsk/autodiff.hpp"
#include "nsk/tensor.hpp"

namespace nsk::nn {

// Uniform on [-a, a] with a = sqrt(6 / (rows + cols)).
TensorPtr xavier_uniform(const PoolPtr& pool, std::size_t rows, std::size_t cols,
                         std::mt19937_64& rng);
TensorPtr xavier_uniform_init(const PoolPtr& pool, std::size_t rows, std::size_t cols,
                              std::uint64_t seed);

// y = x @ w + b, recorded as bias_add(matmul_t(x, w), b).
ad::Var linear(const ad::Var& x, const ad::Var& w, const ad::Var& b);

struct Hyperparams {
  double learning_rate = 0.001;
  double weight_decay = 0.0001;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Trainable parameters plus per-parameter optimizer state. Parameters are
// held weakly; state for a parameter that died is dropped at the next step.
class ParamGroup {
 public:
  void add(const TensorPtr& param);
  std::vector<TensorPtr> live();
  std::size_t size();
  long step_count() const { return steps_; }

  // v = momentum·v + g; w -= lr·v
  void sgd_step(GradCache& cache, double lr, double momentum);
  // Decoupled weight decay, then the bias-corrected Adam update.
  void adamw_step(GradCache& cache, const Hyperparams& hp);

 private:
  struct State {
    std::weak_ptr<Tensor> param;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<std::pair<TensorPtr, State*>> prepare(GradCache& cache);

  std::mutex mu_;
  std::map<const Tensor*, State> state_;
  std::vector<const Tensor*> order_;
  long steps_ = 0;
};

// Scales every cached gradient by max_norm / norm when the global L2 norm
// exceeds max_norm. Returns the applied scale (1.0 when nothing changed).
double clip_grad_norm(GradCache& cache, double max_norm);

}  // namespace nsk::nn
