#include "nsk/autodiff.hpp"

#include <cmath>
#include <unordered_map>

namespace nsk::ad {

const char* to_string(Op op) {
  switch (op) {
    case Op::MatMulT: return "matmul_t";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Hadamard: return "hadamard";
    case Op::ScalarAdd: return "scalar_add";
    case Op::ScalarMul: return "scalar_mul";
    case Op::Neg: return "neg";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::BiasAdd: return "bias_add";
    case Op::OneHot: return "onehot";
    case Op::Data: return "data";
    case Op::LeafVariable: return "leaf-variable";
    case Op::LeafParameter: return "leaf-parameter";
    case Op::Constant: return "constant";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::SumLoss: return "sum_loss";
    case Op::MseLoss: return "mse_loss";
  }
  return "?";
}

bool is_loss(Op op) { return op == Op::CrossEntropy || op == Op::SumLoss || op == Op::MseLoss; }

bool is_leaf(Op op) {
  return op == Op::LeafVariable || op == Op::LeafParameter || op == Op::Constant ||
         op == Op::Data || op == Op::OneHot;
}

NodePtr leaf(TensorPtr tensor) {
  auto n = std::make_shared<Node>();
  n->op = tensor->is_parameter() ? Op::LeafParameter : Op::LeafVariable;
  n->requires_grad = tensor->requires_grad();
  n->output = std::move(tensor);
  return n;
}

NodePtr constant(double value) {
  auto n = std::make_shared<Node>();
  n->op = Op::Constant;
  n->scalar = value;
  return n;
}

Var variable(TensorPtr tensor) {
  NodePtr n = leaf(tensor);
  return {std::move(tensor), std::move(n)};
}

Var source(TensorPtr tensor) {
  auto n = std::make_shared<Node>();
  n->op = Op::Data;
  n->output = tensor;
  return {std::move(tensor), std::move(n)};
}

Var record(Op op, TensorPtr output, NodePtr left, NodePtr right, std::vector<TensorPtr> saved,
           double scalar) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->requires_grad = (left && left->requires_grad) || (right && right->requires_grad);
  if (left) ++left->consumers;
  if (right) ++right->consumers;
  n->left = std::move(left);
  n->right = std::move(right);
  n->saved = std::move(saved);
  n->scalar = scalar;
  n->output = output;
  output->set_requires_grad(n->requires_grad);
  return {std::move(output), std::move(n)};
}

Var matmul_t(const Var& x, const Var& w) {
  return record(Op::MatMulT, ops::matmul_t(*x.value, *w.value), x.node, w.node,
                {x.value, w.value});
}

Var add(const Var& a, const Var& b) {
  return record(Op::Add, ops::add(*a.value, *b.value), a.node, b.node, {});
}

Var sub(const Var& a, const Var& b) {
  return record(Op::Sub, ops::sub(*a.value, *b.value), a.node, b.node, {});
}

Var hadamard(const Var& a, const Var& b) {
  return record(Op::Hadamard, ops::hadamard(*a.value, *b.value), a.node, b.node,
                {a.value, b.value});
}

Var scalar_add(const Var& a, double s) {
  return record(Op::ScalarAdd, ops::scalar_add(*a.value, s), a.node, constant(s), {}, s);
}

Var scalar_mul(const Var& a, double s) {
  return record(Op::ScalarMul, ops::scalar_mul(*a.value, s), a.node, constant(s), {}, s);
}

Var neg(const Var& a) { return record(Op::Neg, ops::neg(*a.value), a.node, nullptr, {}); }

Var relu(const Var& a) { return record(Op::Relu, ops::relu(*a.value), a.node, nullptr, {a.value}); }

Var sigmoid(const Var& a) {
  TensorPtr out = ops::sigmoid(*a.value);
  return record(Op::Sigmoid, out, a.node, nullptr, {out});
}

Var tanh(const Var& a) {
  TensorPtr out = ops::tanh(*a.value);
  return record(Op::Tanh, out, a.node, nullptr, {out});
}

Var bias_add(const Var& x, const Var& b) {
  return record(Op::BiasAdd, ops::bias_add(*x.value, *b.value), x.node, b.node, {});
}

Var onehot(const Var& indices, std::size_t classes) {
  auto n = std::make_shared<Node>();
  n->op = Op::OneHot;
  n->output = ops::onehot(*indices.value, classes);
  return {n->output, n};
}

Var cross_entropy(const Var& logits, const Var& targets) {
  const Tensor& z = *logits.value;
  const Tensor& t = *targets.value;
  if (z.rank() != 2 || z.cols() < 2) {
    throw ShapeError("cross_entropy needs m×c logits with c >= 2, got " + shape_string(z.shape()));
  }
  if (t.rank() != 1 || t.numel() != z.rows()) {
    throw ShapeError("cross_entropy targets must have shape [" + std::to_string(z.rows()) +
                     "], got " + shape_string(t.shape()));
  }
  const std::size_t m = z.rows(), c = z.cols();
  auto tv = t.data();
  auto zv = z.data();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    float label = tv[i];
    if (!(label >= 0.0f) || label >= static_cast<float>(c) || label != std::floor(label)) {
      throw RuntimeError("cross_entropy: target " + std::to_string(label) + " at row " +
                         std::to_string(i) + " is not a class in [0, " + std::to_string(c) + ")");
    }
    const float* row = zv.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    total += mx + std::log(s) - row[static_cast<std::size_t>(label)];
  }
  auto loss = make_tensor(z.pool(), {1});
  loss->data()[0] = static_cast<float>(total / static_cast<double>(m));
  TensorPtr probs = ops::softmax_rows(z);
  return record(Op::CrossEntropy, loss, logits.node, targets.node, {probs, targets.value});
}

Var sum_loss(const Var& x) {
  double total = 0.0;
  for (float v : x.value->data()) total += v;
  auto loss = make_tensor(x.value->pool(), {1});
  loss->data()[0] = static_cast<float>(total);
  Var out = record(Op::SumLoss, loss, x.node, nullptr, {});
  out.node->input_shape = x.value->shape();
  return out;
}

Var mse_loss(const Var& pred, const Var& target) {
  const Tensor& p = *pred.value;
  const Tensor& t = *target.value;
  if (p.shape() != t.shape()) {
    throw ShapeError("mse_loss: shape mismatch " + shape_string(p.shape()) + " vs " +
                     shape_string(t.shape()));
  }
  double total = 0.0;
  auto pv = p.data();
  auto tv = t.data();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    double d = static_cast<double>(pv[i]) - tv[i];
    total += d * d;
  }
  auto loss = make_tensor(p.pool(), {1});
  loss->data()[0] = static_cast<float>(total / static_cast<double>(pv.size()));
  return record(Op::MseLoss, loss, pred.node, target.node, {pred.value, target.value});
}

namespace {

bool wants(const NodePtr& child) { return child && child->requires_grad; }

}  // namespace

GradPair gradient_rule(const Node& node, const Tensor& g) {
  GradPair out;
  const bool want_l = wants(node.left);
  const bool want_r = wants(node.right);
  switch (node.op) {
    case Op::Add:
      if (want_l) out.left = ops::copy(g);
      if (want_r) out.right = want_l ? out.left : ops::copy(g);
      break;
    case Op::Sub:
      if (want_l) out.left = ops::copy(g);
      if (want_r) out.right = ops::neg(g);
      break;
    case Op::Hadamard:
      if (want_l) out.left = ops::hadamard(g, *node.saved[1]);
      if (want_r) out.right = ops::hadamard(g, *node.saved[0]);
      break;
    case Op::ScalarAdd:
      if (want_l) out.left = ops::copy(g);
      break;
    case Op::ScalarMul:
      if (want_l) out.left = ops::scalar_mul(g, node.scalar);
      break;
    case Op::Neg:
      if (want_l) out.left = ops::neg(g);
      break;
    case Op::MatMulT:
      // y = x·wᵀ  =>  dx = g·w, dw = gᵀ·x
      if (want_l) out.left = ops::matmul(g, *node.saved[1]);
      if (want_r) out.right = ops::matmul_tn(g, *node.saved[0]);
      break;
    case Op::Relu:
      if (want_l) {
        out.left = ops::copy(g);
        auto a = node.saved[0]->data();
        auto d = out.left->data();
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (!(a[i] > 0.0f)) d[i] = 0.0f;
        }
      }
      break;
    case Op::Sigmoid:
      if (want_l) {
        out.left = ops::copy(g);
        auto s = node.saved[0]->data();
        auto d = out.left->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= s[i] * (1.0f - s[i]);
      }
      break;
    case Op::Tanh:
      if (want_l) {
        out.left = ops::copy(g);
        auto t = node.saved[0]->data();
        auto d = out.left->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0f - t[i] * t[i];
      }
      break;
    case Op::BiasAdd:
      if (want_l) out.left = ops::copy(g);
      if (want_r) out.right = ops::column_sum(g);
      break;
    case Op::CrossEntropy:
      if (want_l) {
        const Tensor& probs = *node.saved[0];
        auto targets = node.saved[1]->data();
        const std::size_t m = probs.rows(), c = probs.cols();
        out.left = ops::copy(probs);
        auto d = out.left->data();
        for (std::size_t i = 0; i < m; ++i) d[i * c + static_cast<std::size_t>(targets[i])] -= 1.0f;
        const double scale = static_cast<double>(g.data()[0]) / static_cast<double>(m);
        for (float& v : d) v = static_cast<float>(v * scale);
      }
      break;
    case Op::SumLoss:
      if (want_l) out.left = full(g.pool(), node.input_shape, g.data()[0]);
      break;
    case Op::MseLoss: {
      const Tensor& p = *node.saved[0];
      const Tensor& t = *node.saved[1];
      if (want_l || want_r) {
        auto diff = ops::sub(p, t);
        double scale = 2.0 * g.data()[0] / static_cast<double>(p.numel());
        if (want_l) out.left = ops::scalar_mul(*diff, scale);
        if (want_r) out.right = ops::scalar_mul(*diff, -scale);
      }
      break;
    }
    case Op::OneHot:
    case Op::Data:
    case Op::LeafVariable:
    case Op::LeafParameter:
    case Op::Constant:
      break;
  }
  return out;
}

void reclaim(Node& node) {
  node.saved.clear();
  // leaves point at tensors owned by variables or parameters
  if (!is_leaf(node.op)) node.output.reset();
}

// ---------------------------------------------------------------------------
// Tape

void Tape::push_assignment(std::string key, NodePtr root) {
  if (sealed_) throw RuntimeError("tape is sealed");
  stack_.push_back(Entry{std::move(key), std::move(root)});
}

Tape::Entry Tape::pop() {
  Entry e = std::move(stack_.back());
  stack_.pop_back();
  return e;
}

void Tape::clear() { stack_.clear(); }

// ---------------------------------------------------------------------------
// Backward

namespace {

class Backprop {
 public:
  explicit Backprop(GradCache& cache) : cache_(cache) {}

  void seed(const TensorPtr& loss) {
    slots_[loss.get()] = Slot{loss, full(loss->pool(), loss->shape(), 1.0f)};
  }

  // Takes the gradient accumulated for `t`, if any.
  TensorPtr take(const Tensor* t) {
    auto it = slots_.find(t);
    if (it == slots_.end()) return nullptr;
    TensorPtr g = std::move(it->second.grad);
    slots_.erase(it);
    return g;
  }

  void propagate(Node& node, const TensorPtr& g) {
    const bool last = ++node.visits >= node.consumers;
    switch (node.op) {
      case Op::LeafVariable:
        if (node.requires_grad) accumulate_variable(node.output, *g);
        if (last) reclaim(node);
        return;
      case Op::LeafParameter:
        cache_.accumulate(node.output->param_name(), *g);
        if (last) reclaim(node);
        return;
      case Op::Constant:
      case Op::Data:
      case Op::OneHot:
        if (last) reclaim(node);
        return;
      default: break;
    }
    GradPair grads = gradient_rule(node, *g);
    if (last) reclaim(node);
    if (grads.left) propagate(*node.left, grads.left);
    if (grads.right) propagate(*node.right, grads.right);
  }

 private:
  struct Slot {
    TensorPtr owner;  // keeps the key address alive for the whole pass
    TensorPtr grad;
  };

  void accumulate_variable(const TensorPtr& t, const Tensor& g) {
    auto it = slots_.find(t.get());
    if (it == slots_.end()) {
      slots_.emplace(t.get(), Slot{t, ops::copy(g)});
    } else {
      ops::accumulate(*it->second.grad, g);
    }
  }

  GradCache& cache_;
  std::unordered_map<const Tensor*, Slot> slots_;
};

}  // namespace

void backward(Tape& tape, GradCache& cache, std::span<const TensorPtr> params) {
  if (tape.empty()) throw RuntimeError("backward called on an empty tape");
  const Tape::Entry& top = tape.entries().back();
  if (!is_loss(top.root->op)) {
    throw RuntimeError("backward requires a loss as the final operation (found '" +
                       std::string(to_string(top.root->op)) + "' assigned to '" + top.key + "')");
  }
  for (const TensorPtr& p : params) {
    if (p && p->is_parameter()) cache.ensure(p->param_name(), p->shape());
  }

  tape.seal();
  try {
    Backprop bp(cache);
    bp.seed(top.root->output);
    while (!tape.empty()) {
      Tape::Entry entry = tape.pop();
      Node& root = *entry.root;
      if (TensorPtr g = bp.take(root.output.get()); g && root.requires_grad) {
        bp.propagate(root, g);
      }
      // the tree (and any buffers only it owned) goes away with `entry`
    }
  } catch (...) {
    tape.clear();
    tape.unseal();
    throw;
  }
  tape.unseal();
}

}  // namespace nsk::ad
