#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsk/ast.hpp"
#include "nsk/autodiff.hpp"
#include "nsk/concurrency.hpp"
#include "nsk/nn.hpp"
#include "nsk/value.hpp"

namespace nsk {

class Interpreter;
class FunctionRecord;

// Lowering events across the whole process (one per user function body).
long lowering_events();

// The calling thread's tape of backward trees.
ad::Tape& thread_tape();

struct RuntimeOptions {
  std::uint64_t seed = 0;
  std::size_t workers = 3;
  bool strict_shared_writes = true;
  bool trace_calls = false;
  std::ostream* out = nullptr;  // defaults to std::cout
  std::ostream* err = nullptr;  // defaults to std::cerr
  std::string base_dir;         // relative data paths resolve against it
  PoolPtr pool;                 // defaults to a fresh pool
};

struct RuntimeHooks {
  std::function<void(const std::string& function, const std::string& scope_id)> on_call;
  std::function<void(const std::string& key)> on_bind;
};

// Evaluation result: the value plus, for tensors computed by traced ops in
// the current expression, the root of their backward tree.
struct Result {
  Value value;
  ad::NodePtr node;
};

// Execution context threaded through compiled code. `self`, `scope` and
// `caller` are the three hidden arguments of a user function.
struct Frame {
  Interpreter* interp = nullptr;
  ObjectInstance* self = nullptr;
  Scope* scope = nullptr;
  Scope* caller = nullptr;
  FinishScope* finish = nullptr;  // innermost finish whose serial block is running
  int depth = 0;
  bool in_task = false;
};

enum class Flow { Next, Return };
using ExprCode = std::function<Result(Frame&)>;
using StmtCode = std::function<Flow(Frame&)>;
using Code = std::vector<StmtCode>;

class FunctionRecord {
 public:
  FunctionRecord(Interpreter& interp, const ast::FunctionDef& def, int line, std::string name);

  const std::string& name() const noexcept { return name_; }
  const std::vector<std::string>& params() const noexcept { return def_.params; }
  int line() const noexcept { return line_; }
  // Lowers the body on first use; later calls return the cached form.
  const Code& compiled() const;
  int compile_count() const noexcept { return compile_count_.load(); }

 private:
  Interpreter& interp_;
  const ast::FunctionDef& def_;
  int line_;
  std::string name_;
  mutable std::once_flag once_;
  mutable Code code_;
  mutable std::atomic<int> compile_count_{0};
};

class ClassRecord {
 public:
  ClassRecord(Interpreter& interp, const ast::ClassDef& def);

  const std::string& name() const noexcept { return def_.name; }
  const FunctionRecord* method(const std::string& name) const;
  const FunctionRecord* initializer() const;
  const Code& defaults() const;
  std::string next_object_name() { return def_.name + "#" + std::to_string(++instances_); }

 private:
  Interpreter& interp_;
  const ast::ClassDef& def_;
  std::map<std::string, std::unique_ptr<FunctionRecord>> methods_;
  mutable std::once_flag once_;
  mutable Code defaults_;
  std::atomic<long> instances_{0};
};

struct BuiltinSpec {
  std::size_t min_args;
  std::size_t max_args;
  Result (*fn)(Frame& frame, std::vector<Result>& args);
};

const std::unordered_map<std::string, BuiltinSpec>& builtin_table();

class Interpreter {
 public:
  explicit Interpreter(ast::Program program, RuntimeOptions options = {});
  ~Interpreter();

  Interpreter(const Interpreter&) = delete;
  Interpreter& operator=(const Interpreter&) = delete;

  // Runs top-level statements, then `entry` when it exists. Throws on error.
  void run(const std::string& entry = "main");
  // Like run, but reports the error on the error stream and returns 1.
  int execute(const std::string& entry = "main");

  void set_hooks(RuntimeHooks hooks) { hooks_ = std::move(hooks); }
  const RuntimeHooks& hooks() const noexcept { return hooks_; }
  const RuntimeOptions& options() const noexcept { return options_; }

  const FunctionRecord* function(const std::string& name) const;
  ClassRecord* class_record(const std::string& name) const;
  int compile_count(const std::string& function) const;
  // Function bodies this interpreter has lowered so far.
  long lowering_count() const noexcept { return lowerings_.load(); }

  Value call_function(const FunctionRecord& fn, ObjectInstance* self, std::vector<Result> args,
                      Frame& caller, int line);
  ObjectPtr instantiate(ClassRecord& cls, std::vector<Result> args, Frame& caller, int line);
  // Calls a top-level function from host code (prefetch loaders, tests).
  Value call(const std::string& function, std::vector<Value> args, bool in_task = false);

  const PoolPtr& pool() const noexcept { return pool_; }
  GradCache& grad_cache() noexcept { return cache_; }
  nn::ParamGroup& params() noexcept { return params_; }
  LockRegistry& locks() noexcept { return locks_; }
  Scope& global_scope() noexcept { return *global_; }

  std::string new_scope_id();
  long scopes_created() const noexcept { return scopes_created_.load(); }
  void write_line(const std::string& text);
  void trace(const std::string& text);
  template <class F>
  decltype(auto) with_rng(F&& f) {
    std::lock_guard lock(rng_mu_);
    return std::forward<F>(f)(rng_);
  }
  std::string resolve_path(const std::string& path) const;
  // Registers a trainable tensor; unnamed ones get a provisional name.
  void register_parameter(const TensorPtr& t);

 private:
  friend class Compiler;
  friend class FunctionRecord;

  ast::Program program_;
  RuntimeOptions options_;
  RuntimeHooks hooks_;
  PoolPtr pool_;
  GradCache cache_;
  nn::ParamGroup params_;
  LockRegistry locks_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
  std::mutex io_mu_;
  std::atomic<long> scopes_created_{0};
  std::atomic<long> lowerings_{0};
  std::atomic<long> param_counter_{0};
  std::unordered_map<std::string, std::unique_ptr<FunctionRecord>> functions_;
  std::unordered_map<std::string, std::unique_ptr<ClassRecord>> classes_;
  Code top_level_;
  bool has_top_level_statements_ = false;
  std::unique_ptr<Scope> global_;
};

// Lowers AST into compiled code closures.
class Compiler {
 public:
  explicit Compiler(Interpreter& interp) : interp_(interp) {}
  Code lower_block(const ast::Block& block);
  StmtCode lower_statement(const ast::Stmt& stmt, bool direct_async = false);
  ExprCode lower_expression(const ast::Expr& expr);

 private:
  StmtCode lower_assign(const ast::Assign& a, int line, bool direct_async);
  StmtCode lower_finish(const ast::Finish& f, int line);
  ExprCode lower_call(const ast::Call& c, int line);
  ExprCode lower_method_call(const ast::MethodCall& c, int line);
  std::vector<ExprCode> lower_args(const std::vector<ast::ExprPtr>& args);

  Interpreter& interp_;
};

}  // namespace nsk
