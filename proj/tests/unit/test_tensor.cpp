#include "doctest.h"

#include <cmath>
#include <set>
#include <thread>

#include "nsk/tensor.hpp"
#include "oracles.hpp"

using namespace nsk;

namespace {

PoolPtr new_pool() { return std::make_shared<Pool>(); }

TensorPtr tensor(const PoolPtr& pool, Shape shape, std::vector<float> values) {
  return make_tensor(pool, std::move(shape), values);
}

std::vector<float> values(const TensorPtr& t) { return {t->data().begin(), t->data().end()}; }

}  // namespace

TEST_CASE("acquire from an empty pool allocates fresh") {
  Pool pool;
  auto b = pool.acquire(512);
  CHECK(b->capacity() == 512);
  CHECK(b->origin() == Buffer::Origin::Fresh);
  CHECK(pool.stats().fresh_allocations == 1);
  CHECK(pool.stats().pool_hits == 0);
}

TEST_CASE("released buffer is handed back on the next acquire of that size") {
  Pool pool;
  auto b = pool.acquire(512);
  const Buffer* identity = b.get();
  pool.release(std::move(b));
  CHECK(pool.free_count(512) == 1);
  auto again = pool.acquire(512);
  CHECK(again.get() == identity);
  CHECK(again->origin() == Buffer::Origin::Pooled);
  CHECK(pool.stats().pool_hits == 1);
  CHECK(pool.stats().fresh_allocations == 1);
}

TEST_CASE("pool keys on exact size") {
  Pool pool;
  pool.release(pool.acquire(512));
  auto b = pool.acquire(256);
  CHECK(b->origin() == Buffer::Origin::Fresh);
  CHECK(pool.stats().fresh_allocations == 2);
  CHECK(pool.free_count(512) == 1);
}

TEST_CASE("free lists are LIFO") {
  Pool pool;
  auto a = pool.acquire(512);
  auto b = pool.acquire(512);
  const Buffer* pa = a.get();
  const Buffer* pb = b.get();
  pool.release(a);
  pool.release(b);
  CHECK(pool.free_count(512) == 2);
  CHECK(pool.acquire(512).get() == pb);
  CHECK(pool.acquire(512).get() == pa);
}

TEST_CASE("releasing contents are left as they were") {
  Pool pool;
  auto a = pool.acquire(4);
  a->data()[2] = 7.5f;
  pool.release(a);
  CHECK(pool.acquire(4)->data()[2] == 7.5f);
}

TEST_CASE("double release is rejected") {
  Pool pool;
  auto a = pool.acquire(8);
  pool.release(a);
  CHECK_THROWS_AS(pool.release(a), RuntimeError);
  CHECK(pool.free_count(8) == 1);
}

TEST_CASE("disabled pool allocates every time") {
  Pool pool(false);
  for (int i = 0; i < 5; ++i) pool.release(pool.acquire(64));
  CHECK(pool.stats().fresh_allocations == 5);
  CHECK(pool.stats().pool_hits == 0);
  CHECK(pool.free_total() == 0);
}

TEST_CASE("zero-sized acquire is an error") {
  Pool pool;
  CHECK_THROWS_AS(pool.acquire(0), RuntimeError);
}

TEST_CASE("impossible allocation reports out of memory with the size") {
  Pool pool;
  try {
    pool.acquire(std::size_t{1} << 60);
    FAIL("expected out of memory");
  } catch (const OutOfMemory& e) {
    CHECK(std::string(e.what()).find("out of memory") != std::string::npos);
    CHECK(std::string(e.what()).find(std::to_string(std::size_t{1} << 60)) != std::string::npos);
  }
}

TEST_CASE("pool conservation at quiescent points") {
  auto pool = new_pool();
  std::mt19937 rng(5);
  std::vector<TensorPtr> live;
  for (int step = 0; step < 2000; ++step) {
    if (live.empty() || rng() % 3 != 0) {
      live.push_back(make_tensor(pool, {1 + rng() % 7}));
    } else {
      live.erase(live.begin() + static_cast<long>(rng() % live.size()));
    }
    PoolStats s = pool->stats();
    REQUIRE(s.fresh_allocations == live.size() + pool->free_total());
    REQUIRE(s.fresh_allocations + s.pool_hits == live.size() + s.releases);
    REQUIRE(pool->outstanding() == live.size());
  }
}

TEST_CASE("concurrent acquires never share a buffer") {
  auto pool = new_pool();
  for (int i = 0; i < 64; ++i) pool->release(pool->acquire(32));
  std::vector<std::vector<BufferPtr>> got(4);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 200; ++i) got[t].push_back(pool->acquire(32));
    });
  }
  for (auto& th : threads) th.join();
  std::set<const Buffer*> seen;
  for (auto& v : got) {
    for (auto& b : v) CHECK(seen.insert(b.get()).second);
  }
  CHECK(seen.size() == 800);
  CHECK(pool->stats().fresh_allocations + pool->stats().pool_hits == 864);
}

TEST_CASE("tensor returns its buffer when destroyed") {
  auto pool = new_pool();
  {
    auto t = make_tensor(pool, {2, 3});
    CHECK(t->numel() == 6);
    CHECK(pool->outstanding() == 1);
  }
  CHECK(pool->outstanding() == 0);
  CHECK(pool->free_count(6) == 1);
  CHECK_THROWS_AS(make_tensor(pool, {2, 0}), ShapeError);
  CHECK_THROWS_AS(make_tensor(pool, {2, 2, 2}), ShapeError);
}

TEST_CASE("matmul_t small cases") {
  auto pool = new_pool();
  auto y = ops::matmul_t(*tensor(pool, {1, 2}, {1, 2}), *tensor(pool, {1, 2}, {3, 4}));
  CHECK(y->shape() == Shape{1, 1});
  CHECK(y->data()[0] == 11.0f);

  auto x = tensor(pool, {3, 3}, {1, -2, 3, 0.5f, 5, 6, 7, 8, -9});
  auto eye = tensor(pool, {3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(ops::matmul_t(*x, *eye)) == values(x));
}

TEST_CASE("matmul_t shape mismatch names both shapes") {
  auto pool = new_pool();
  try {
    ops::matmul_t(*make_tensor(pool, {2, 3}), *make_tensor(pool, {4, 2}));
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul_t matches the triple-loop oracle") {
  auto pool = new_pool();
  std::mt19937_64 rng(2024);
  auto check = [&](std::size_t m, std::size_t k, std::size_t n) {
    auto xv = oracle::random_values(rng, m * k);
    auto wv = oracle::random_values(rng, n * k);
    auto x = make_tensor(pool, {m, k}, oracle::to_float(xv));
    auto w = make_tensor(pool, {n, k}, oracle::to_float(wv));
    auto want = oracle::matmul_t(oracle::to_double(values(x)), oracle::to_double(values(w)), m, k, n);
    auto y = ops::matmul_t(*x, *w);
    REQUIRE(y->shape() == Shape{m, n});
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(y->data()[i] - want[i]) <= 1e-5);
  };
  check(5, 7, 4);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 100; ++trial) check(dim(rng), dim(rng), dim(rng));
}

TEST_CASE("matmul and matmul_tn agree with matmul_t through transposition") {
  auto pool = new_pool();
  std::mt19937_64 rng(3);
  auto a = make_tensor(pool, {3, 4}, oracle::to_float(oracle::random_values(rng, 12)));
  auto b = make_tensor(pool, {4, 2}, oracle::to_float(oracle::random_values(rng, 8)));
  // a·b = a·(bᵀ)ᵀ
  auto bt = make_tensor(pool, {2, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) bt->at(j, i) = b->at(i, j);
  auto y1 = ops::matmul(*a, *b);
  auto y2 = ops::matmul_t(*a, *bt);
  for (std::size_t i = 0; i < 6; ++i) CHECK(y1->data()[i] == doctest::Approx(y2->data()[i]).epsilon(1e-6));
  // aᵀ·c with c 3×2
  auto c = make_tensor(pool, {3, 2}, oracle::to_float(oracle::random_values(rng, 6)));
  auto y3 = ops::matmul_tn(*a, *c);
  REQUIRE(y3->shape() == Shape{4, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t r = 0; r < 3; ++r) s += double(a->at(r, i)) * c->at(r, j);
      CHECK(y3->at(i, j) == doctest::Approx(s).epsilon(1e-6));
    }
  }
}

TEST_CASE("elementwise ops") {
  auto pool = new_pool();
  CHECK(values(ops::add(*tensor(pool, {2}, {1, 2}), *tensor(pool, {2}, {3, 4}))) ==
        std::vector<float>{4, 6});
  CHECK(values(ops::sub(*tensor(pool, {2}, {1, 2}), *tensor(pool, {2}, {3, 5}))) ==
        std::vector<float>{-2, -3});
  CHECK(values(ops::hadamard(*tensor(pool, {2}, {2, 3}), *tensor(pool, {2}, {4, 5}))) ==
        std::vector<float>{8, 15});
  CHECK(values(ops::relu(*tensor(pool, {3}, {-1, 0, 2}))) == std::vector<float>{0, 0, 2});
  CHECK(values(ops::sigmoid(*tensor(pool, {1}, {0}))) == std::vector<float>{0.5f});
  CHECK(values(ops::scalar_add(*tensor(pool, {2}, {1, 2}), 1.5)) == std::vector<float>{2.5f, 3.5f});
  CHECK(values(ops::scalar_mul(*tensor(pool, {2}, {1, 2}), -2)) == std::vector<float>{-2, -4});
  CHECK(values(ops::neg(*tensor(pool, {2}, {1, -2}))) == std::vector<float>{-1, 2});
  auto th = ops::tanh(*tensor(pool, {2}, {0.5f, -3}));
  CHECK(th->data()[0] == doctest::Approx(std::tanh(0.5)));
  CHECK(th->data()[1] == doctest::Approx(std::tanh(-3.0)));
  auto big = ops::sigmoid(*tensor(pool, {2}, {-100, 100}));
  CHECK(std::isfinite(big->data()[0]));
  CHECK(big->data()[1] == 1.0f);
  CHECK_THROWS_AS(ops::add(*make_tensor(pool, {2}), *make_tensor(pool, {3})), ShapeError);
  CHECK_THROWS_AS(ops::hadamard(*make_tensor(pool, {2, 1}), *make_tensor(pool, {1, 2})),
                  ShapeError);
}

TEST_CASE("bias add and column sum") {
  auto pool = new_pool();
  auto x = tensor(pool, {2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = tensor(pool, {3}, {10, 20, 30});
  CHECK(values(ops::bias_add(*x, *b)) == std::vector<float>{11, 22, 33, 14, 25, 36});
  CHECK(values(ops::column_sum(*x)) == std::vector<float>{5, 7, 9});
  CHECK_THROWS_AS(ops::bias_add(*x, *make_tensor(pool, {2})), ShapeError);
}

TEST_CASE("onehot") {
  auto pool = new_pool();
  auto a = ops::onehot(*tensor(pool, {1}, {1}), 3);
  CHECK(a->shape() == Shape{1, 3});
  CHECK(values(a) == std::vector<float>{0, 1, 0});
  CHECK(values(ops::onehot(*tensor(pool, {2}, {0, 2}), 3)) == std::vector<float>{1, 0, 0, 0, 0, 1});
  CHECK_THROWS_AS(ops::onehot(*tensor(pool, {1}, {3}), 3), RuntimeError);
  CHECK_THROWS_AS(ops::onehot(*tensor(pool, {1}, {0.5f}), 3), RuntimeError);
  try {
    ops::onehot(*tensor(pool, {3}, {0, 1, 7}), 3);
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("softmax rows sum to one and survive large logits") {
  auto pool = new_pool();
  auto p = ops::softmax_rows(*tensor(pool, {2, 2}, {1000, -1000, 0, 0}));
  CHECK(p->at(0, 0) == doctest::Approx(1.0));
  CHECK(p->at(0, 1) == doctest::Approx(0.0));
  CHECK(p->at(1, 0) == doctest::Approx(0.5));
}

TEST_CASE("ops fully overwrite pooled outputs") {
  auto pool = new_pool();
  pool->set_poison(true);
  std::mt19937_64 rng(11);
  auto x = make_tensor(pool, {4, 3}, oracle::to_float(oracle::random_values(rng, 12)));
  auto w = make_tensor(pool, {5, 3}, oracle::to_float(oracle::random_values(rng, 15)));
  auto b = make_tensor(pool, {5}, oracle::to_float(oracle::random_values(rng, 5)));
  auto idx = tensor(pool, {4}, {0, 1, 2, 1});
  auto scan = [](const TensorPtr& t) {
    for (float v : t->data()) REQUIRE_FALSE(Pool::is_poison(v));
  };
  for (int round = 0; round < 3; ++round) {
    // each round reuses poisoned buffers from the previous one
    auto y = ops::matmul_t(*x, *w);
    scan(y);
    auto z = ops::bias_add(*y, *b);
    scan(z);
    scan(ops::relu(*z));
    scan(ops::sigmoid(*z));
    scan(ops::tanh(*z));
    scan(ops::add(*z, *z));
    scan(ops::sub(*z, *z));
    scan(ops::hadamard(*z, *z));
    scan(ops::scalar_add(*z, 1));
    scan(ops::scalar_mul(*z, 2));
    scan(ops::neg(*z));
    scan(ops::column_sum(*z));
    scan(ops::onehot(*idx, 5));
    scan(ops::copy(*z));
    scan(ops::softmax_rows(*z));
    scan(ops::matmul(*y, *w));
    scan(ops::matmul_tn(*y, *x));
    scan(full(pool, {4, 5}, 0.0f));
  }
  CHECK(pool->stats().pool_hits > 0);
}

TEST_CASE("gradient cache accumulates and zeroes") {
  auto pool = new_pool();
  GradCache cache;
  auto g = tensor(pool, {2}, {1.5f, -2});
  cache.accumulate("w", *g);
  cache.accumulate("w", *g);
  CHECK(cache.values("w") == std::vector<float>{3, -4});
  CHECK(cache.dirty("w"));
  cache.zero_after_step();
  CHECK(cache.values("w") == std::vector<float>{0, 0});
  CHECK_FALSE(cache.dirty("w"));
  cache.zero_after_step();
  CHECK(cache.values("w") == std::vector<float>{0, 0});
  CHECK_THROWS_AS(cache.accumulate("w", *make_tensor(pool, {3})), ShapeError);
  CHECK_THROWS_AS(cache.values("missing"), RuntimeError);
}

TEST_CASE("gradient cache keeps one buffer per parameter") {
  auto pool = new_pool();
  GradCache cache;
  for (const char* name : {"a", "b", "c"}) cache.accumulate(name, *full(pool, {3}, 1.0f));
  CHECK(cache.size() == 3);
  const float* before = cache.span("a").data();
  cache.zero_after_step();
  cache.accumulate("a", *full(pool, {3}, 2.0f));
  CHECK(cache.span("a").data() == before);
  for (const char* name : {"b", "c"}) CHECK(cache.values(name) == std::vector<float>{0, 0, 0});
  GradCache empty;
  CHECK_NOTHROW(empty.zero_after_step());
}

TEST_CASE("parameter naming binds once") {
  auto pool = new_pool();
  auto t = make_tensor(pool, {2});
  t->make_parameter("param#1", true);
  CHECK(t->is_parameter());
  CHECK(t->requires_grad());
  t->bind_name("Net#1.w");
  CHECK(t->param_name() == "Net#1.w");
  t->bind_name("s9.alias");
  CHECK(t->param_name() == "Net#1.w");
}
