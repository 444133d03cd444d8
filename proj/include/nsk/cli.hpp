#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

namespace nsk::cli {

struct RunConfig {
  std::string script;
  std::string entry = "main";
  std::uint64_t seed = 0;
  std::size_t workers = 3;
  bool strict_shared_writes = true;
  bool pool_stats = false;
  bool check_grads = false;
  bool dump_ast = false;
  bool trace_calls = false;
};

// Exit status: 0 success, 1 program error, 2 usage error.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace nsk::cli
