#include "nsk/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "nsk/autodiff.hpp"
#include "nsk/nn.hpp"

namespace nsk::gradcheck {

namespace {

using Vec = std::vector<double>;

struct Case {
  std::string name;
  std::vector<Shape> shapes;
  std::function<ad::Var(const std::vector<ad::Var>&)> forward;  // returns a loss
  std::function<double(const std::vector<Vec>&)> reference;
  bool avoid_kinks = false;
};

// y = x·wᵀ for row-major x [m×k], w [n×k].
Vec matmul_t(const Vec& x, const Vec& w, std::size_t m, std::size_t k, std::size_t n) {
  Vec y(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < k; ++c) y[i * n + j] += x[i * k + c] * w[j * k + c];
  return y;
}

double sum(const Vec& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}

template <class F>
Vec map(const Vec& v, F f) {
  Vec out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), f);
  return out;
}

template <class F>
Vec zip(const Vec& a, const Vec& b, F f) {
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double cross_entropy(const Vec& z, const std::vector<float>& targets, std::size_t c) {
  const std::size_t m = targets.size();
  double total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[i * c + j] - mx);
    total += mx + std::log(s) - z[i * c + static_cast<std::size_t>(targets[i])];
  }
  return total / static_cast<double>(m);
}

std::vector<Case> cases(const PoolPtr& pool) {
  auto summed = [](ad::Var v) { return ad::sum_loss(v); };
  std::vector<Case> out;
  out.push_back({"matmul_t", {{4, 3}, {5, 3}},
                 [=](const auto& in) { return summed(ad::matmul_t(in[0], in[1])); },
                 [](const auto& in) { return sum(matmul_t(in[0], in[1], 4, 3, 5)); }});
  out.push_back({"add", {{3, 4}, {3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::add(in[0], in[1]), in[0])); },
                 [](const auto& in) {
                   return sum(zip(zip(in[0], in[1], std::plus<>()), in[0], std::multiplies<>()));
                 }});
  out.push_back({"sub", {{3, 4}, {3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::sub(in[0], in[1]), in[1])); },
                 [](const auto& in) {
                   return sum(zip(zip(in[0], in[1], std::minus<>()), in[1], std::multiplies<>()));
                 }});
  out.push_back({"hadamard", {{3, 4}, {3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(in[0], in[1])); },
                 [](const auto& in) { return sum(zip(in[0], in[1], std::multiplies<>())); }});
  out.push_back({"scalar_add", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::scalar_add(in[0], 1.7), in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return (x + 1.7) * x; })); }});
  out.push_back({"scalar_mul", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::scalar_mul(in[0], -0.6), in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return -0.6 * x * x; })); }});
  out.push_back({"neg", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::neg(in[0]), in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return -x * x; })); }});
  out.push_back({"relu", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::relu(in[0]), in[0])); },
                 [](const auto& in) {
                   return sum(map(in[0], [](double x) { return std::max(x, 0.0) * x; }));
                 },
                 true});
  out.push_back({"sigmoid", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::sigmoid(in[0]), in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return sigmoid(x) * x; })); }});
  out.push_back({"tanh", {{3, 4}},
                 [=](const auto& in) { return summed(ad::hadamard(ad::tanh(in[0]), in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return std::tanh(x) * x; })); }});
  out.push_back({"bias_add", {{4, 3}, {3}},
                 [=](const auto& in) {
                   auto y = ad::bias_add(in[0], in[1]);
                   return summed(ad::hadamard(y, y));
                 },
                 [](const auto& in) {
                   double s = 0;
                   for (std::size_t i = 0; i < 4; ++i)
                     for (std::size_t j = 0; j < 3; ++j) {
                       double y = in[0][i * 3 + j] + in[1][j];
                       s += y * y;
                     }
                   return s;
                 }});
  out.push_back({"linear", {{4, 3}, {2, 3}, {2}},
                 [=](const auto& in) { return summed(ad::sigmoid(nn::linear(in[0], in[1], in[2]))); },
                 [](const auto& in) {
                   Vec y = matmul_t(in[0], in[1], 4, 3, 2);
                   for (std::size_t i = 0; i < 4; ++i)
                     for (std::size_t j = 0; j < 2; ++j) y[i * 2 + j] += in[2][j];
                   return sum(map(y, sigmoid));
                 }});
  std::vector<float> targets{0, 3, 1, 1, 2};
  auto target_tensor = make_tensor(pool, {targets.size()}, targets);
  out.push_back({"cross_entropy", {{5, 4}},
                 [=](const auto& in) { return ad::cross_entropy(in[0], ad::variable(target_tensor)); },
                 [=](const auto& in) { return cross_entropy(in[0], targets, 4); }});
  out.push_back({"sum_loss", {{2, 3}},
                 [=](const auto& in) { return ad::sum_loss(ad::tanh(in[0])); },
                 [](const auto& in) { return sum(map(in[0], [](double x) { return std::tanh(x); })); }});
  out.push_back({"mse_loss", {{3, 2}, {3, 2}},
                 [=](const auto& in) { return ad::mse_loss(in[0], in[1]); },
                 [](const auto& in) {
                   return sum(zip(in[0], in[1], [](double a, double b) { return (a - b) * (a - b); })) /
                          6.0;
                 }});
  return out;
}

Report check(const Case& c, const PoolPtr& pool, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<TensorPtr> tensors;
  std::vector<Vec> values;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    std::vector<float> v(numel(c.shapes[i]));
    for (float& x : v) {
      do {
        x = static_cast<float>(dist(rng));
      } while (c.avoid_kinks && std::abs(x) < 0.05f);
    }
    auto t = make_tensor(pool, c.shapes[i], v);
    t->make_parameter("in" + std::to_string(i), false);
    tensors.push_back(t);
    values.emplace_back(v.begin(), v.end());
  }

  std::vector<ad::Var> vars;
  for (const auto& t : tensors) vars.push_back(ad::variable(t));
  ad::Tape tape;
  GradCache cache;
  tape.push_assignment("loss", c.forward(vars).node);
  ad::backward(tape, cache, tensors);

  Report r{c.name, true, 0.0};
  const double eps = 1e-3;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::vector<float> analytic = cache.values("in" + std::to_string(i));
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      std::vector<Vec> plus = values, minus = values;
      plus[i][j] += eps;
      minus[i][j] -= eps;
      const double numeric = (c.reference(plus) - c.reference(minus)) / (2 * eps);
      const double err = std::abs(analytic[j] - numeric) / std::max(1e-4, 1e-2 * std::abs(numeric));
      r.worst = std::max(r.worst, err);
    }
  }
  r.pass = r.worst <= 1.0;
  return r;
}

}  // namespace

std::vector<Report> check_all(std::uint64_t seed) {
  auto pool = std::make_shared<Pool>();
  std::mt19937_64 rng(seed);
  std::vector<Report> out;
  for (const auto& c : cases(pool)) out.push_back(check(c, pool, rng));
  return out;
}

}  // namespace nsk::gradcheck
