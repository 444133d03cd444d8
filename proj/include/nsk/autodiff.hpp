#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nsk/tensor.hpp"

namespace nsk::ad {

enum class Op {
  MatMulT,
  Add,
  Sub,
  Hadamard,
  ScalarAdd,
  ScalarMul,
  Neg,
  Relu,
  Sigmoid,
  Tanh,
  BiasAdd,
  OneHot,         // no-gradient source
  Data,           // no-gradient source (loaded data, constructors)
  LeafVariable,   // reads a tensor bound to a variable
  LeafParameter,  // reads a trainable parameter
  Constant,       // scalar operand
  CrossEntropy,   // loss
  SumLoss,        // loss
  MseLoss,        // loss
};

const char* to_string(Op op);
bool is_loss(Op op);
bool is_leaf(Op op);

// One node of a backward binary tree. Interior nodes keep the tensors their
// gradient rule reads in `saved`; `output` is the value the node produced.
struct Node {
  Op op = Op::Constant;
  std::shared_ptr<Node> left;
  std::shared_ptr<Node> right;
  std::vector<TensorPtr> saved;
  TensorPtr output;
  Shape input_shape;  // used by reductions
  double scalar = 0.0;
  bool requires_grad = false;
  int consumers = 0;  // parent nodes that read this one
  int visits = 0;     // gradients received so far during backward
};

using NodePtr = std::shared_ptr<Node>;

// A tensor value together with the node that produced it.
struct Var {
  TensorPtr value;
  NodePtr node;
};

NodePtr leaf(TensorPtr tensor);
NodePtr constant(double value);
Var variable(TensorPtr tensor);
Var source(TensorPtr tensor);

// Links a freshly computed output to its operand nodes.
Var record(Op op, TensorPtr output, NodePtr left, NodePtr right, std::vector<TensorPtr> saved,
           double scalar = 0.0);

Var matmul_t(const Var& x, const Var& w);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scalar_add(const Var& a, double s);
Var scalar_mul(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var bias_add(const Var& x, const Var& b);
Var onehot(const Var& indices, std::size_t classes);

// Mean softmax cross-entropy over rows; targets are class indices [m].
Var cross_entropy(const Var& logits, const Var& targets);
// Sum of all elements.
Var sum_loss(const Var& x);
// Mean squared error over all elements.
Var mse_loss(const Var& pred, const Var& target);

struct GradPair {
  TensorPtr left;
  TensorPtr right;
};

// Gradients flowing to the node's children given the incoming gradient.
// Children that do not require a gradient get a null tensor.
GradPair gradient_rule(const Node& node, const Tensor& grad);

// Drops the node's tensors; buffers with no other owner return to the pool.
// Called once every consumer has delivered its gradient.
void reclaim(Node& node);

class Tape {
 public:
  struct Entry {
    std::string key;
    NodePtr root;
  };

  void push_assignment(std::string key, NodePtr root);
  Entry pop();
  void clear();

  std::size_t depth() const noexcept { return stack_.size(); }
  bool empty() const noexcept { return stack_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return stack_; }

  void seal() noexcept { sealed_ = true; }
  void unseal() noexcept { sealed_ = false; }
  bool sealed() const noexcept { return sealed_; }

 private:
  std::vector<Entry> stack_;
  bool sealed_ = false;
};

// Pops every tree, propagating gradients top-down from the loss on top of the
// stack. Parameter gradients accumulate in `cache`; every parameter listed in
// `params` gets a cache entry even if no gradient reached it.
void backward(Tape& tape, GradCache& cache, std::span<const TensorPtr> params = {});

}  // namespace nsk::ad
