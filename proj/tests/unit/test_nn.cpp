#include "doctest.h"

#include <cmath>

#include "nsk/nn.hpp"
#include "oracles.hpp"

using namespace nsk;

namespace {

struct Setup {
  PoolPtr pool = std::make_shared<Pool>();
  GradCache cache;
  nn::ParamGroup group;

  TensorPtr param(const std::string& name, std::vector<float> values) {
    auto t = make_tensor(pool, {values.size()}, values);
    t->make_parameter(name, false);
    group.add(t);
    return t;
  }
  void set_grad(const TensorPtr& p, std::vector<float> g) {
    cache.zero_after_step();
    cache.accumulate(p->param_name(), *make_tensor(pool, {g.size()}, g));
  }
};

double quad_loss(const std::vector<float>& w, const std::vector<double>& target) {
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - target[i]) * (w[i] - target[i]);
  return s;
}

}  // namespace

TEST_CASE("xavier bounds and determinism") {
  auto pool = std::make_shared<Pool>();
  auto t = nn::xavier_uniform_init(pool, 3, 3, 1);
  for (float v : t->data()) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  auto a = nn::xavier_uniform_init(pool, 4, 6, 42);
  auto b = nn::xavier_uniform_init(pool, 4, 6, 42);
  CHECK(std::equal(a->data().begin(), a->data().end(), b->data().begin()));
  auto c = nn::xavier_uniform_init(pool, 4, 6, 43);
  CHECK_FALSE(std::equal(a->data().begin(), a->data().end(), c->data().begin()));
}

TEST_CASE("xavier samples follow the uniform law") {
  auto pool = std::make_shared<Pool>();
  auto t = nn::xavier_uniform_init(pool, 100, 100, 7);  // 10,000 samples
  const double a = std::sqrt(6.0 / 200.0);
  double mean = 0, mx = 0;
  for (float v : t->data()) {
    mean += v;
    mx = std::max(mx, std::abs(static_cast<double>(v)));
  }
  mean /= 10000.0;
  CHECK(std::abs(mean) <= 0.02);
  CHECK(mx <= static_cast<float>(a));
  CHECK(mx > 0.9 * a);
}

TEST_CASE("linear layer") {
  auto pool = std::make_shared<Pool>();
  auto var = [&](Shape s, std::vector<float> v) { return ad::variable(make_tensor(pool, s, v)); };
  auto y = nn::linear(var({1, 2}, {1, 2}), var({1, 2}, {3, 4}), var({1}, {1}));
  CHECK(y.value->data()[0] == 12.0f);

  std::mt19937_64 rng(1);
  auto x = var({4, 3}, oracle::to_float(oracle::random_values(rng, 12)));
  auto w = var({2, 3}, oracle::to_float(oracle::random_values(rng, 6)));
  auto zero = var({2}, {0, 0});
  auto with_bias = nn::linear(x, w, zero);
  auto plain = ops::matmul_t(*x.value, *w.value);
  CHECK(std::equal(plain->data().begin(), plain->data().end(), with_bias.value->data().begin()));
  CHECK_THROWS_AS(nn::linear(x, w, var({3}, {0, 0, 0})), ShapeError);
}

TEST_CASE("bias gradient under sum loss is the row count") {
  auto pool = std::make_shared<Pool>();
  std::mt19937_64 rng(2);
  GradCache cache;
  ad::Tape tape;
  auto x = ad::variable(make_tensor(pool, {4, 3}, oracle::to_float(oracle::random_values(rng, 12))));
  auto wt = make_tensor(pool, {2, 3}, oracle::to_float(oracle::random_values(rng, 6)));
  wt->make_parameter("w", false);
  auto bt = make_tensor(pool, {2}, std::vector<float>{0.1f, -0.2f});
  bt->make_parameter("b", false);
  auto y = nn::linear(x, ad::variable(wt), ad::variable(bt));
  tape.push_assignment("s.y", y.node);
  tape.push_assignment("s.loss", ad::sum_loss(ad::variable(y.value)).node);
  ad::backward(tape, cache);
  CHECK(cache.values("b") == std::vector<float>{4, 4});
  // finite differences: d/db_j sum(x wᵀ + b) = m
  auto bv = oracle::to_double(std::vector<float>{0.1f, -0.2f});
  auto xv = oracle::to_double({x.value->data().begin(), x.value->data().end()});
  auto wv = oracle::to_double({wt->data().begin(), wt->data().end()});
  auto f = [&](const oracle::Vec& b) {
    auto yy = oracle::matmul_t(xv, wv, 4, 3, 2);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 2; ++j) yy[i * 2 + j] += b[j];
    return oracle::sum(yy);
  };
  auto n = oracle::numeric_grad(f, bv);
  for (std::size_t j = 0; j < 2; ++j) CHECK(oracle::grad_close(cache.values("b")[j], n[j]));
}

TEST_CASE("sgd examples") {
  Setup s;
  auto w = s.param("w", {1});
  s.set_grad(w, {1});
  s.group.sgd_step(s.cache, 0.1, 0.0);
  CHECK(w->data()[0] == doctest::Approx(0.9));

  Setup m;
  auto w2 = m.param("w", {1});
  for (int i = 0; i < 2; ++i) {
    m.set_grad(w2, {1});
    m.group.sgd_step(m.cache, 0.1, 0.9);
  }
  CHECK(w2->data()[0] == doctest::Approx(0.71).epsilon(1e-6));

  Setup z;
  auto w3 = z.param("w", {0.25f, -3});
  z.set_grad(w3, {5, 5});
  z.group.sgd_step(z.cache, 0.0, 0.9);
  CHECK(w3->data()[0] == 0.25f);
  CHECK(w3->data()[1] == -3.0f);
}

TEST_CASE("optimizers need a gradient for every parameter") {
  Setup s;
  auto w = s.param("w", {1});
  try {
    s.group.sgd_step(s.cache, 0.1, 0.0);
    FAIL("expected error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
  CHECK_THROWS_AS(s.group.adamw_step(s.cache, {}), RuntimeError);
}

TEST_CASE("adamw first step closed form") {
  Setup s;
  auto w = s.param("w", {1});
  s.set_grad(w, {1});
  nn::Hyperparams hp;
  hp.learning_rate = 0.001;
  hp.weight_decay = 0.0;
  s.group.adamw_step(s.cache, hp);
  CHECK(w->data()[0] == doctest::Approx(1.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-7));
  CHECK(s.group.step_count() == 1);
}

TEST_CASE("adamw decay-only path shrinks by the exact factor") {
  Setup s;
  auto w = s.param("w", {2});
  nn::Hyperparams hp;
  hp.learning_rate = 0.001;
  hp.weight_decay = 0.0001;
  double expect = 2.0;
  for (int step = 0; step < 5; ++step) {
    s.set_grad(w, {0});
    s.group.adamw_step(s.cache, hp);
    expect = static_cast<float>(expect * (1.0 - hp.learning_rate * hp.weight_decay));
    CHECK(w->data()[0] == static_cast<float>(expect));
  }
}

TEST_CASE("adamw matches a 64-bit reference on a quadratic bowl") {
  std::mt19937_64 rng(9);
  auto start = oracle::random_values(rng, 6);
  auto target = oracle::random_values(rng, 6);
  Setup s;
  auto w = s.param("w", oracle::to_float(start));
  nn::Hyperparams hp;
  hp.learning_rate = 0.01;
  hp.weight_decay = 0.0001;
  oracle::AdamW ref{hp.learning_rate, hp.weight_decay};
  oracle::Vec rw = oracle::to_double(oracle::to_float(start));
  double initial = quad_loss({w->data().begin(), w->data().end()}, target);
  for (int step = 0; step < 10; ++step) {
    std::vector<float> g(6);
    oracle::Vec rg(6);
    for (std::size_t i = 0; i < 6; ++i) {
      g[i] = static_cast<float>(2.0 * (w->data()[i] - target[i]));
      rg[i] = g[i];
    }
    s.set_grad(w, g);
    s.group.adamw_step(s.cache, hp);
    ref.step(rw, rg);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::abs(w->data()[i] - rw[i]) <= 1e-5 * std::max(1.0, std::abs(rw[i])));
    }
  }
  CHECK(quad_loss({w->data().begin(), w->data().end()}, target) < initial);
}

TEST_CASE("both optimizers decrease a convex quadratic almost every step") {
  std::mt19937_64 rng(10);
  auto target = oracle::random_values(rng, 5);
  for (int which = 0; which < 2; ++which) {
    Setup s;
    auto w = s.param("w", oracle::to_float(oracle::random_values(rng, 5)));
    nn::Hyperparams hp;
    hp.learning_rate = 0.01;
    int decreases = 0;
    double prev = quad_loss({w->data().begin(), w->data().end()}, target);
    for (int step = 0; step < 100; ++step) {
      std::vector<float> g(5);
      for (std::size_t i = 0; i < 5; ++i) g[i] = static_cast<float>(2.0 * (w->data()[i] - target[i]));
      s.set_grad(w, g);
      if (which == 0) {
        s.group.sgd_step(s.cache, 0.01, 0.0);
      } else {
        s.group.adamw_step(s.cache, hp);
      }
      double now = quad_loss({w->data().begin(), w->data().end()}, target);
      decreases += now < prev;
      prev = now;
    }
    CAPTURE(which);
    CHECK(decreases >= 95);
  }
}

TEST_CASE("optimizer state is dropped with its parameter") {
  Setup s;
  auto keep = s.param("keep", {1});
  {
    auto gone = s.param("gone", {1});
    CHECK(s.group.size() == 2);
  }
  CHECK(s.group.size() == 1);
  s.set_grad(keep, {1});
  CHECK_NOTHROW(s.group.sgd_step(s.cache, 0.1, 0.0));
}

TEST_CASE("gradient clipping") {
  auto pool = std::make_shared<Pool>();
  auto grad = [&](GradCache& c, const std::string& n, std::vector<float> v) {
    c.accumulate(n, *make_tensor(pool, {v.size()}, v));
  };
  GradCache a;
  grad(a, "g", {3, 4});
  CHECK(nn::clip_grad_norm(a, 5) == 1.0);
  CHECK(a.values("g") == std::vector<float>{3, 4});

  GradCache b;
  grad(b, "g", {6, 8});
  CHECK(nn::clip_grad_norm(b, 5) == doctest::Approx(0.5));
  CHECK(b.values("g")[0] == doctest::Approx(3));
  CHECK(b.values("g")[1] == doctest::Approx(4));

  GradCache c;
  grad(c, "g1", {3, 0});
  grad(c, "g2", {0, 4});
  CHECK(nn::clip_grad_norm(c, 2.5) == doctest::Approx(0.5));
  CHECK(c.values("g1")[0] == doctest::Approx(1.5));
  CHECK(c.values("g2")[1] == doctest::Approx(2));
}

TEST_CASE("clipping is idempotent") {
  auto pool = std::make_shared<Pool>();
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    GradCache c;
    c.accumulate("a", *make_tensor(pool, {5}, oracle::to_float(oracle::random_values(rng, 5, -4, 4))));
    c.accumulate("b", *make_tensor(pool, {3}, oracle::to_float(oracle::random_values(rng, 3, -4, 4))));
    nn::clip_grad_norm(c, 1.5);
    auto once_a = c.values("a"), once_b = c.values("b");
    nn::clip_grad_norm(c, 1.5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(c.values("a")[i] == doctest::Approx(once_a[i]).epsilon(1e-6));
    for (std::size_t i = 0; i < 3; ++i) CHECK(c.values("b")[i] == doctest::Approx(once_b[i]).epsilon(1e-6));
  }
}
