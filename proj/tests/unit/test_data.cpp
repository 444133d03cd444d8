#include "doctest.h"

#include <algorithm>
#include <sstream>

#include "nsk/data.hpp"

using namespace nsk;

namespace {

data::Table table_from(const PoolPtr& pool, const std::string& csv, const std::string& label = "label") {
  std::istringstream in(csv);
  return data::parse_csv(pool, in, label);
}

std::string counting_csv(int rows) {
  std::string s = "x,label\n";
  for (int i = 0; i < rows; ++i) s += std::to_string(i) + "," + std::to_string(i % 2) + "\n";
  return s;
}

std::vector<float> drain(data::Dataset& ds, std::vector<std::size_t>* sizes = nullptr) {
  std::vector<float> rows;
  while (auto b = ds.next_batch()) {
    if (sizes) sizes->push_back(b->labels->numel());
    for (float v : b->features->data()) rows.push_back(v);
  }
  return rows;
}

}  // namespace

TEST_CASE("xor table") {
  auto pool = std::make_shared<Pool>();
  auto t = table_from(pool, "a,b,label\n0,0,0\n0,1,1\n1,0,1\n1,1,0\n");
  CHECK(t.features->shape() == Shape{4, 2});
  CHECK(t.labels->shape() == Shape{4});
  CHECK(t.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(t.features->at(2, 0) == 1.0f);
  CHECK(t.labels->data()[3] == 0.0f);
}

TEST_CASE("label column may sit anywhere") {
  auto pool = std::make_shared<Pool>();
  auto t = table_from(pool, "y, p ,q\n1, 2.5, -3\n0,4,5e-1\n", "y");
  CHECK(t.features->shape() == Shape{2, 2});
  CHECK(t.features->at(0, 0) == 2.5f);
  CHECK(t.features->at(1, 1) == 0.5f);
  CHECK(t.labels->data()[0] == 1.0f);
}

TEST_CASE("load errors") {
  auto pool = std::make_shared<Pool>();
  CHECK_THROWS_AS(table_from(pool, "a,b\n1,2\n"), LoadError);
  try {
    table_from(pool, "a,label\n1,0\nx,1\n");
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("column 1") != std::string::npos);
  }
  CHECK_THROWS_AS(table_from(pool, "a,label\n1\n"), LoadError);
  CHECK_THROWS_AS(table_from(pool, "a,label\n"), LoadError);
  CHECK_THROWS_AS(data::load_csv(pool, "/nonexistent/file.csv", "label"), LoadError);
}

TEST_CASE("final partial batch is kept then the end marker repeats") {
  auto pool = std::make_shared<Pool>();
  data::Dataset ds(table_from(pool, counting_csv(10)), 4, false, 0);
  std::vector<std::size_t> sizes;
  auto rows = drain(ds, &sizes);
  CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
  CHECK(rows == std::vector<float>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_FALSE(ds.next_batch().has_value());
  CHECK_FALSE(ds.next_batch().has_value());
  ds.start_epoch();
  CHECK(ds.next_batch().has_value());
}

TEST_CASE("seeded shuffling is reproducible and changes per epoch") {
  auto pool = std::make_shared<Pool>();
  auto epoch_rows = [&](std::uint64_t seed, int epochs) {
    data::Dataset ds(table_from(pool, counting_csv(32)), 5, true, seed);
    std::vector<std::vector<float>> out;
    for (int e = 0; e < epochs; ++e) {
      ds.start_epoch();
      out.push_back(drain(ds));
    }
    return out;
  };
  auto a = epoch_rows(11, 2), b = epoch_rows(11, 2), c = epoch_rows(12, 1);
  CHECK(a == b);
  CHECK(a[0] != a[1]);
  CHECK(a[0] != c[0]);
  std::vector<float> sorted = a[0];
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 32; ++i) CHECK(sorted[i] == static_cast<float>(i));
}

TEST_CASE("every row is delivered exactly once for any batch size and worker count") {
  auto pool = std::make_shared<Pool>();
  for (std::size_t workers : {1u, 2u, 3u}) {
    for (std::size_t batch : {1u, 3u, 7u, 23u, 40u}) {
      data::Dataset ds(table_from(pool, counting_csv(23)), batch, true, 3, workers, 2);
      for (int epoch = 0; epoch < 2; ++epoch) {
        ds.start_epoch();
        auto rows = drain(ds);
        std::sort(rows.begin(), rows.end());
        REQUIRE(rows.size() == 23);
        for (int i = 0; i < 23; ++i) CHECK(rows[i] == static_cast<float>(i));
      }
    }
  }
}

TEST_CASE("labels travel with their rows") {
  auto pool = std::make_shared<Pool>();
  data::Dataset ds(table_from(pool, counting_csv(17)), 4, true, 8, 3, 2);
  while (auto b = ds.next_batch()) {
    for (std::size_t r = 0; r < b->labels->numel(); ++r) {
      int x = static_cast<int>(b->features->at(r, 0));
      CHECK(b->labels->data()[r] == static_cast<float>(x % 2));
    }
  }
}
