#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "nsk/cli.hpp"
#include "nsk/data.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "nsk");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.status = nsk::cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string script(const std::string& name) {
  return (fs::path(NSK_SOURCE_DIR) / "scripts" / name).string();
}

std::string temp_script(const std::string& name, const std::string& body) {
  fs::path p = fs::temp_directory_path() / ("nsk_cli_" + name);
  std::ofstream(p) << body;
  return p.string();
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("hello runs and exits 0") {
  auto r = invoke({"run", script("hello.nsk")});
  CHECK(r.status == 0);
  CHECK(r.out == "hello\n");
  CHECK(r.err.empty());
}

TEST_CASE("usage errors exit 2") {
  CHECK(invoke({"run", script("missing.nsk")}).status == 2);
  CHECK(invoke({"run", script("hello.nsk"), "--bogus"}).status == 2);
  CHECK(invoke({"run", script("hello.nsk"), "--workers", "0"}).status == 2);
  CHECK(invoke({"run", script("hello.nsk"), "--seed", "abc"}).status == 2);
  CHECK(invoke({"run", script("hello.nsk"), "--strict-shared-writes", "maybe"}).status == 2);
  CHECK(invoke({"run"}).status == 2);
  CHECK(invoke({}).status == 2);
}

TEST_CASE("help exits 0") {
  auto r = invoke({"--help"});
  CHECK(r.status == 0);
  CHECK(contains(r.out, "run"));
}

TEST_CASE("parse errors exit 1 with line and column") {
  auto path = temp_script("bad.nsk", "def main():\n    x = (1 +\n");
  auto r = invoke({"run", path});
  CHECK(r.status == 1);
  CHECK(contains(r.err, "line 2"));
  CHECK(contains(r.err, "column"));
  CHECK(r.out.empty());
}

TEST_CASE("runtime errors exit 1") {
  auto path = temp_script("boom.nsk", "def main():\n    x = 1 + \"a\"\n");
  auto r = invoke({"run", path});
  CHECK(r.status == 1);
  CHECK(contains(r.err, "error:"));
  CHECK(contains(r.err, "line 2"));
}

TEST_CASE("entry selection") {
  CHECK(invoke({"run", script("warm_pool.nsk"), "--entry", "one_step", "--workers", "1"}).status == 0);
  auto r = invoke({"run", script("hello.nsk"), "--entry", "nowhere"});
  CHECK(r.status == 1);
  CHECK(contains(r.err, "nowhere"));
}

TEST_CASE("same seed and one worker give identical output") {
  auto a = invoke({"run", script("xor_mlp.nsk"), "--seed", "7", "--workers", "1"});
  auto b = invoke({"run", script("xor_mlp.nsk"), "--seed", "7", "--workers", "1"});
  auto c = invoke({"run", script("xor_mlp.nsk"), "--seed", "8", "--workers", "1"});
  REQUIRE(a.status == 0);
  CHECK(a.out == b.out);
  CHECK(a.out != c.out);
}

TEST_CASE("diagnostic flags leave stdout untouched") {
  auto plain = invoke({"run", script("xor_mlp.nsk"), "--seed", "3", "--workers", "1"});
  auto noisy = invoke({"run", script("xor_mlp.nsk"), "--seed", "3", "--workers", "1", "--pool-stats",
                       "--check-grads", "--trace-calls"});
  REQUIRE(noisy.status == 0);
  CHECK(plain.out == noisy.out);
  CHECK(contains(noisy.err, "pool: fresh="));
  CHECK(contains(noisy.err, "call main scope="));
}

TEST_CASE("check-grads passes for every op") {
  auto r = invoke({"run", script("hello.nsk"), "--check-grads"});
  CHECK(r.status == 0);
  std::istringstream lines(r.err);
  std::string line;
  std::set<std::string> ops;
  while (std::getline(lines, line)) {
    if (line.rfind("check-grads ", 0) != 0) continue;
    CAPTURE(line);
    CHECK(contains(line, ": PASS"));
    ops.insert(line.substr(12, line.find(':') - 12));
  }
  for (const char* op : {"matmul_t", "add", "sub", "hadamard", "relu", "sigmoid", "tanh", "linear",
                         "cross_entropy", "sum_loss", "mse_loss"}) {
    CAPTURE(op);
    CHECK(ops.count(op));
  }
}

TEST_CASE("dump-ast prints the tree without running") {
  auto path = temp_script("dump.nsk", "y = x@w + x\nprint(\"ran\")\n");
  auto r = invoke({"run", path, "--dump-ast"});
  CHECK(r.status == 0);
  CHECK(contains(r.out,
                 "assign = @1\n"
                 "  variable y @1\n"
                 "  binary + @1\n"
                 "    binary @ @1\n"
                 "      variable x @1\n"
                 "      variable w @1\n"
                 "    variable x @1\n"));
  CHECK_FALSE(contains(r.out, "ran\n"));
}

TEST_CASE("strict shared writes can be switched off") {
  auto path = temp_script("race.nsk",
                          "def main():\n"
                          "    c = 0\n"
                          "    finish:\n"
                          "        async c = c + 1\n"
                          "    print(c)\n");
  auto strict = invoke({"run", path});
  CHECK(strict.status == 1);
  CHECK(contains(strict.err, "unsynchronized shared write"));
  auto relaxed = invoke({"run", path, "--strict-shared-writes", "off"});
  CHECK(relaxed.status == 0);
  CHECK(relaxed.out == "1\n");
}

TEST_CASE("two-moons data set loads as 1000 x 2 with binary labels") {
  auto pool = std::make_shared<nsk::Pool>();
  auto t = nsk::data::load_csv(pool, script("data/moons.csv"), "label");
  CHECK(t.features->shape() == nsk::Shape{1000, 2});
  CHECK(t.labels->shape() == nsk::Shape{1000});
  std::size_t ones = 0;
  for (float v : t.labels->data()) {
    CHECK((v == 0.0f || v == 1.0f));
    ones += v == 1.0f;
  }
  CHECK(ones == 500);
}
