#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <map>

#include "nsk/concurrency.hpp"

using namespace nsk;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

void sleep_ms(int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); }

}  // namespace

TEST_CASE("finish joins every task before returning") {
  std::vector<Clock::time_point> done(4);
  FinishScope fin;
  for (int i = 0; i < 4; ++i) {
    fin.spawn([&, i] {
      sleep_ms(5 * (i + 1));
      done[i] = Clock::now();
    });
  }
  fin.join();
  auto after = Clock::now();
  for (auto t : done) CHECK(t <= after);
  CHECK(fin.pending() == 0);
}

TEST_CASE("first error wins and carries the task line") {
  FinishScope fin;
  std::atomic<int> finished{0};
  fin.spawn([] { throw RuntimeError("boom"); }, 12);
  fin.spawn([&] {
    sleep_ms(20);
    finished++;
    throw RuntimeError("late");
  }, 13);
  fin.spawn([&] {
    sleep_ms(10);
    finished++;
  }, 14);
  try {
    fin.join();
    FAIL("expected error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()) == "boom");
    CHECK(e.line() == 12);
  }
  CHECK(finished == 2);  // other tasks ran to completion
}

TEST_CASE("an error that already knows its line keeps it") {
  FinishScope fin;
  fin.spawn([] { throw RuntimeError("inner", 40); }, 7);
  try {
    fin.join();
  } catch (const RuntimeError& e) {
    CHECK(e.line() == 40);
  }
}

TEST_CASE("locked increments are exact") {
  for (int run = 0; run < 50; ++run) {
    LockRegistry locks;
    long counter = 0;
    FinishScope fin;
    for (int i = 0; i < 1000; ++i) {
      fin.spawn([&] { locked_assign(locks, "s1.c", [&] { counter = counter + 1; }); });
    }
    fin.join();
    REQUIRE(counter == 1000);
  }
}

TEST_CASE("two tasks adding to a shared value") {
  LockRegistry locks;
  for (int run = 0; run < 100; ++run) {
    int c = 0;
    FinishScope fin;
    for (int i = 0; i < 2; ++i) fin.spawn([&] { locked_assign(locks, "s.c", [&] { c += 1; }); });
    fin.join();
    REQUIRE(c == 2);
  }
}

TEST_CASE("tasks writing disjoint keys match any serial order") {
  std::map<std::string, int> serial;
  for (int i = 0; i < 8; ++i) serial["t" + std::to_string(i)] = i * i;
  for (int run = 0; run < 20; ++run) {
    LockRegistry locks;
    std::map<std::string, int> store;
    std::mutex store_mu;
    FinishScope fin;
    for (int i = 0; i < 8; ++i) {
      fin.spawn([&, i] {
        std::string key = "t" + std::to_string(i);
        locked_assign(locks, key, [&] {
          std::lock_guard g(store_mu);
          store[key] = i * i;
        });
      });
    }
    fin.join();
    CHECK(store == serial);
    CHECK(locks.size() == 8);
  }
}

TEST_CASE("nested finish completes before the outer one") {
  std::atomic<int> order{0};
  int inner_done = -1, outer_done = -1;
  FinishScope outer;
  outer.spawn([&] {
    FinishScope inner;
    inner.spawn([&] { sleep_ms(10); });
    inner.join();
    inner_done = order++;
  });
  outer.join();
  outer_done = order++;
  CHECK(inner_done == 0);
  CHECK(outer_done == 1);
}

TEST_CASE("prefetch delivers every batch then the end marker") {
  PrefetchQueue<int> q([](std::size_t i) { return static_cast<int>(i) * 10; }, 10, 3, 2);
  std::vector<std::size_t> seen;
  while (auto item = q.next()) {
    CHECK(item->value == static_cast<int>(item->index) * 10);
    seen.push_back(item->index);
  }
  std::sort(seen.begin(), seen.end());
  CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_FALSE(q.next().has_value());
  CHECK_FALSE(q.next().has_value());
}

TEST_CASE("single worker preserves order") {
  PrefetchQueue<int> q([](std::size_t i) { return static_cast<int>(i); }, 20, 1, 3);
  int expect = 0;
  while (auto item = q.next()) CHECK(item->value == expect++);
  CHECK(expect == 20);
}

TEST_CASE("buffered batches never exceed capacity") {
  PrefetchQueue<int> q([](std::size_t i) { return static_cast<int>(i); }, 30, 4, 2);
  sleep_ms(20);
  CHECK(q.buffered() <= 2);
  while (q.next()) {
    CHECK(q.buffered() <= 2);
    sleep_ms(1);
  }
}

TEST_CASE("loader failure poisons the queue") {
  PrefetchQueue<int> q(
      [](std::size_t i) {
        if (i == 5) throw RuntimeError("bad batch 5");
        return static_cast<int>(i);
      },
      10, 1, 2);
  int received = 0;
  try {
    while (q.next()) ++received;
    FAIL("expected the loader error");
  } catch (const RuntimeError& e) {
    CHECK(std::string(e.what()) == "bad batch 5");
  }
  CHECK(received == 5);
  CHECK_THROWS_AS(q.next(), RuntimeError);
}

TEST_CASE("poisoning with several workers raises on the 5th call or later") {
  for (int run = 0; run < 10; ++run) {
    PrefetchQueue<int> q(
        [](std::size_t i) {
          if (i == 5) throw RuntimeError("bad");
          return static_cast<int>(i);
        },
        10, 3, 4);
    int calls = 0;
    bool raised = false;
    try {
      for (;;) {
        ++calls;
        if (!q.next()) break;
      }
    } catch (const RuntimeError&) {
      raised = true;
    }
    CHECK(raised);
    CHECK(calls >= 5);
  }
}

TEST_CASE("concurrent consumers receive each batch exactly once") {
  for (std::size_t workers : {1u, 2u, 3u, 5u}) {
    for (std::size_t cap : {1u, 3u, 8u}) {
      PrefetchQueue<int> q([](std::size_t i) { return static_cast<int>(i); }, 100, workers, cap);
      std::vector<std::vector<int>> got(3);
      std::vector<std::thread> consumers;
      for (int c = 0; c < 3; ++c) {
        consumers.emplace_back([&, c] {
          while (auto item = q.next()) got[c].push_back(item->value);
        });
      }
      for (auto& t : consumers) t.join();
      std::vector<int> all;
      for (auto& g : got) all.insert(all.end(), g.begin(), g.end());
      std::sort(all.begin(), all.end());
      std::vector<int> want(100);
      for (int i = 0; i < 100; ++i) want[i] = i;
      CHECK(all == want);
    }
  }
}

TEST_CASE("prefetching overlaps loading with compute") {
  const int batches = 10, load_ms = 10, train_ms = 10;
  auto t0 = Clock::now();
  for (int i = 0; i < batches; ++i) {
    sleep_ms(load_ms);
    sleep_ms(train_ms);
  }
  const double serial = ms_since(t0);

  auto t1 = Clock::now();
  {
    PrefetchQueue<int> q(
        [&](std::size_t i) {
          sleep_ms(load_ms);
          return static_cast<int>(i);
        },
        batches, 3, 3);
    while (q.next()) sleep_ms(train_ms);
  }
  const double pipelined = ms_since(t1);
  const double bound = std::max(batches * load_ms / 3.0, double(batches * train_ms));
  CAPTURE(serial);
  CAPTURE(pipelined);
  CHECK(pipelined <= 1.3 * bound);
  CHECK(pipelined <= 0.7 * serial);
}

TEST_CASE("double buffering keeps the consumer fed") {
  PrefetchQueue<int> q(
      [](std::size_t i) {
        sleep_ms(4);
        return static_cast<int>(i);
      },
      10, 1, 1);
  std::vector<double> waits;
  for (;;) {
    auto t0 = Clock::now();
    auto item = q.next();
    waits.push_back(ms_since(t0));
    if (!item) break;
    sleep_ms(12);
  }
  // after the first batch the next one is always ready (or nearly so)
  for (std::size_t i = 1; i < waits.size(); ++i) {
    CAPTURE(i);
    CHECK(waits[i] < 3.0);
  }
}
