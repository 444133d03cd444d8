#include "nsk/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "nsk/gradcheck.hpp"
#include "nsk/parser.hpp"
#include "nsk/runtime.hpp"

namespace nsk::cli {

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  std::ifstream file(config.script);
  if (!file) {
    err << "error: cannot open '" << config.script << "'\n";
    return 2;
  }
  std::stringstream source;
  source << file.rdbuf();

  ast::Program program;
  try {
    program = parse_source(source.str());
  } catch (const Error& e) {
    err << "error: " << config.script << ": " << e.describe() << '\n';
    return 1;
  }

  if (config.dump_ast) {
    out << ast::dump(program);
    return 0;
  }

  bool grads_ok = true;
  if (config.check_grads) {
    for (const auto& r : gradcheck::check_all(config.seed)) {
      err << "check-grads " << r.op << ": " << (r.pass ? "PASS" : "FAIL") << '\n';
      grads_ok = grads_ok && r.pass;
    }
  }

  auto pool = std::make_shared<Pool>();
  int status;
  {
    RuntimeOptions options;
    options.seed = config.seed;
    options.workers = config.workers;
    options.strict_shared_writes = config.strict_shared_writes;
    options.trace_calls = config.trace_calls;
    options.out = &out;
    options.err = &err;
    options.base_dir = std::filesystem::path(config.script).parent_path().string();
    options.pool = pool;
    Interpreter interp(std::move(program), options);
    status = interp.execute(config.entry);
  }
  out.flush();
  if (config.pool_stats) {
    PoolStats s = pool->stats();
    err << "pool: fresh=" << s.fresh_allocations << " hits=" << s.pool_hits
        << " released=" << s.releases << '\n';
  }
  if (status == 0 && !grads_ok) status = 1;
  return status;
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"nsk: run nsk-mini scripts", "nsk"};
  app.require_subcommand(1);
  RunConfig config;
  std::string strict = "on";
  CLI::App* run_cmd = app.add_subcommand("run", "Run a script");
  run_cmd->add_option("script", config.script, "Script to run")->required();
  run_cmd->add_option("--entry", config.entry, "Entry function")->capture_default_str();
  run_cmd->add_option("--seed", config.seed, "Random seed")->capture_default_str();
  run_cmd->add_option("--workers", config.workers, "Prefetch workers")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  run_cmd->add_option("--strict-shared-writes", strict, "Reject unsynchronized shared writes")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  run_cmd->add_flag("--pool-stats", config.pool_stats, "Print pool statistics at exit");
  run_cmd->add_flag("--check-grads", config.check_grads, "Verify op gradients first");
  run_cmd->add_flag("--dump-ast", config.dump_ast, "Print the syntax tree and exit");
  run_cmd->add_flag("--trace-calls", config.trace_calls, "Print one line per function call");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n' << app.help();
    return 2;
  }
  config.strict_shared_writes = strict == "on";
  return run(config, out, err);
}

}  // namespace nsk::cli
