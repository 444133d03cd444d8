#include "nsk/runtime.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <set>

#include "eval_support.hpp"

namespace nsk {

namespace {

std::atomic<long> g_lowerings{0};
thread_local ad::Tape t_tape;
constexpr int kMaxDepth = 1000;

bool recordable(const ad::NodePtr& n) {
  return n && n->op != ad::Op::LeafVariable && n->op != ad::Op::LeafParameter &&
         n->op != ad::Op::Constant;
}

std::string qualified_hint(const Frame& f, const std::string& name) {
  return f.scope ? " (" + f.scope->key(name) + ")" : "";
}

Value read_variable(const Frame& f, const std::string& name) {
  for (Scope* s = f.scope; s; s = s->parent()) {
    if (auto v = s->bindings().get(s->key(name))) return std::move(*v);
  }
  throw RuntimeError("undefined variable '" + name + "'" + qualified_hint(f, name));
}

ObjectInstance& require_self(const Frame& f) {
  if (!f.self) throw RuntimeError("'self' used outside of a method");
  return *f.self;
}

void collect_reads(const ast::Expr& e, std::set<std::string>& out);

void collect_reads(const std::vector<ast::ExprPtr>& es, std::set<std::string>& out) {
  for (const auto& e : es) collect_reads(*e, out);
}

void collect_reads(const ast::Expr& e, std::set<std::string>& out) {
  if (auto* v = ast::get_if<ast::Variable>(e)) {
    out.insert(v->name);
  } else if (auto* u = ast::get_if<ast::Unary>(e)) {
    collect_reads(*u->operand, out);
  } else if (auto* b = ast::get_if<ast::Binary>(e)) {
    collect_reads(*b->left, out);
    collect_reads(*b->right, out);
  } else if (auto* c = ast::get_if<ast::Call>(e)) {
    collect_reads(c->args, out);
  } else if (auto* m = ast::get_if<ast::MethodCall>(e)) {
    if (m->object) collect_reads(*m->object, out);
    collect_reads(m->args, out);
  }
}

// Names a statement reads and names it assigns.
void collect_names(const ast::Stmt& s, std::set<std::string>& reads, std::set<std::string>& writes) {
  auto block = [&](const ast::Block& b) {
    for (const auto& st : b) collect_names(*st, reads, writes);
  };
  if (auto* e = ast::get_if<ast::ExprStmt>(s)) {
    collect_reads(*e->expr, reads);
  } else if (auto* a = ast::get_if<ast::Assign>(s)) {
    collect_reads(*a->value, reads);
    if (auto* v = ast::get_if<ast::Variable>(*a->target)) writes.insert(v->name);
  } else if (auto* i = ast::get_if<ast::If>(s)) {
    collect_reads(*i->cond, reads);
    block(i->then_block);
    block(i->else_block);
  } else if (auto* w = ast::get_if<ast::While>(s)) {
    collect_reads(*w->cond, reads);
    block(w->body);
  } else if (auto* f = ast::get_if<ast::For>(s)) {
    collect_reads(*f->start, reads);
    collect_reads(*f->end, reads);
    collect_reads(*f->step, reads);
    writes.insert(f->var);
    block(f->body);
  } else if (auto* r = ast::get_if<ast::Return>(s)) {
    if (r->value) collect_reads(*r->value, reads);
  } else if (auto* fin = ast::get_if<ast::Finish>(s)) {
    block(fin->serial);
    block(fin->async_stmts);
  } else if (auto* as = ast::get_if<ast::AsyncStmt>(s)) {
    collect_names(*as->body, reads, writes);
  }
}

bool reads_attribute(const ast::Expr& e, const std::string& attr) {
  if (auto* s = ast::get_if<ast::SelfAccess>(e)) return s->attribute == attr;
  if (auto* u = ast::get_if<ast::Unary>(e)) return reads_attribute(*u->operand, attr);
  if (auto* b = ast::get_if<ast::Binary>(e)) {
    return reads_attribute(*b->left, attr) || reads_attribute(*b->right, attr);
  }
  auto any = [&](const std::vector<ast::ExprPtr>& args) {
    for (const auto& a : args) {
      if (reads_attribute(*a, attr)) return true;
    }
    return false;
  };
  if (auto* c = ast::get_if<ast::Call>(e)) return any(c->args);
  if (auto* m = ast::get_if<ast::MethodCall>(e)) {
    return (m->object && reads_attribute(*m->object, attr)) || any(m->args);
  }
  return false;
}

// Writes from a task to storage other tasks can reach go through the key's
// lock. A plain `=` whose right side reads the target is a read-modify-write
// that the lock cannot make atomic, so strict mode rejects it.
void store(Frame& f, Bindings& b, const std::string& key, const std::string& name, Result rhs,
           std::optional<ast::BinaryOp> compound, bool shared, bool reads_target) {
  auto write = [&] {
    if (compound) {
      auto current = b.get(key);
      if (!current) throw RuntimeError("undefined variable '" + name + "' (" + key + ")");
      rhs = detail::apply_binary(*compound, Result{std::move(*current), nullptr}, rhs);
    }
    detail::bind_value(f, b, key, std::move(rhs));
  };
  if (!shared) return write();
  if (!compound && reads_target && f.interp->options().strict_shared_writes) {
    throw RuntimeError("unsynchronized shared write to '" + name + "' (" + key + ")");
  }
  locked_assign(f.interp->locks(), key, write);
}

struct TaskCode {
  StmtCode code;
  std::vector<std::string> captures;
  int line;
};

// Runs one async statement in a fresh task scope. Variables the statement
// only reads are copied in at spawn time; assigned names stay shared.
void spawn_task(Frame& f, FinishScope& fin, std::shared_ptr<const TaskCode> task) {
  auto scope = std::make_shared<Scope>(f.interp->new_scope_id(), f.scope);
  for (const auto& name : task->captures) {
    for (Scope* s = f.scope; s; s = s->parent()) {
      if (auto v = s->bindings().get(s->key(name))) {
        scope->bindings().set(scope->key(name), std::move(*v));
        if (f.interp->hooks().on_bind) f.interp->hooks().on_bind(scope->key(name));
        break;
      }
    }
  }
  Frame tf = f;
  tf.scope = scope.get();
  tf.caller = nullptr;
  tf.finish = nullptr;
  tf.in_task = true;
  const int line = task->line;
  fin.spawn(
      [tf, scope, task]() mutable {
        task->code(tf);
        thread_tape().clear();
      },
      line);
}

std::shared_ptr<const TaskCode> make_task(Compiler& c, const ast::Stmt& s) {
  std::set<std::string> reads, writes;
  collect_names(s, reads, writes);
  std::vector<std::string> captures;
  for (const auto& r : reads) {
    if (!writes.count(r)) captures.push_back(r);
  }
  return std::make_shared<TaskCode>(TaskCode{c.lower_statement(s, true), std::move(captures), s.line});
}

struct ActiveTasks {
  explicit ActiveTasks(Scope* s) : scope(s) { ++scope->active_tasks; }
  ~ActiveTasks() { --scope->active_tasks; }
  Scope* scope;
};

Flow run_code(const Code& code, Frame& f) {
  for (const auto& s : code) {
    if (s(f) == Flow::Return) return Flow::Return;
  }
  return Flow::Next;
}

}  // namespace

long lowering_events() { return g_lowerings.load(); }

ad::Tape& thread_tape() { return t_tape; }

namespace detail {

ad::Var as_var(const Result& r, const std::string& what) {
  auto* t = std::get_if<TensorPtr>(&r.value);
  if (!t) throw TypeError(what + " expects a tensor, got " + type_name(r.value));
  return {*t, r.node ? r.node : ad::leaf(*t)};
}

bool truthy(const Value& v) {
  if (auto* b = std::get_if<bool>(&v)) return *b;
  if (auto* d = std::get_if<double>(&v)) return *d != 0.0;
  throw TypeError(std::string("condition must be a bool or number, got ") + type_name(v));
}

namespace {

bool equal_values(const Value& x, const Value& y, ast::BinaryOp op) {
  if (x.index() != y.index()) {
    throw TypeError(std::string("cannot compare ") + type_name(x) + " with " + type_name(y) +
                    " using '" + ast::symbol(op) + "'");
  }
  if (std::holds_alternative<TensorPtr>(x)) {
    throw TypeError("tensors cannot be compared with '" + std::string(ast::symbol(op)) + "'");
  }
  if (auto* o = std::get_if<ObjectPtr>(&x)) return o->get() == std::get<ObjectPtr>(y).get();
  if (auto* h = std::get_if<NativePtr>(&x)) return h->get() == std::get<NativePtr>(y).get();
  return x == y;
}

}  // namespace

Result apply_binary(ast::BinaryOp op, const Result& a, const Result& b) {
  using B = ast::BinaryOp;
  const Value& x = a.value;
  const Value& y = b.value;
  const double* xn = std::get_if<double>(&x);
  const double* yn = std::get_if<double>(&y);
  const bool xt = std::holds_alternative<TensorPtr>(x);
  const bool yt = std::holds_alternative<TensorPtr>(y);
  const std::string sym = ast::symbol(op);
  auto mismatch = [&] {
    return TypeError("unsupported operand types for '" + sym + "': " + type_name(x) + " and " +
                     type_name(y));
  };
  auto traced = [](ad::Var v) { return Result{std::move(v.value), std::move(v.node)}; };
  auto lhs = [&] { return as_var(a, "'" + sym + "'"); };
  auto rhs = [&] { return as_var(b, "'" + sym + "'"); };

  switch (op) {
    case B::Eq: return {equal_values(x, y, op), nullptr};
    case B::Ne: return {!equal_values(x, y, op), nullptr};
    case B::Lt:
    case B::Le:
    case B::Gt:
    case B::Ge: {
      int cmp;
      if (xn && yn) {
        cmp = *xn < *yn ? -1 : (*xn > *yn ? 1 : 0);
        if (std::isnan(*xn) || std::isnan(*yn)) return {false, nullptr};
      } else if (std::holds_alternative<std::string>(x) && std::holds_alternative<std::string>(y)) {
        cmp = std::get<std::string>(x).compare(std::get<std::string>(y));
      } else {
        throw mismatch();
      }
      bool r = op == B::Lt ? cmp < 0 : op == B::Le ? cmp <= 0 : op == B::Gt ? cmp > 0 : cmp >= 0;
      return {r, nullptr};
    }
    case B::Add:
      if (xn && yn) return {*xn + *yn, nullptr};
      if (std::holds_alternative<std::string>(x) && std::holds_alternative<std::string>(y)) {
        return {std::get<std::string>(x) + std::get<std::string>(y), nullptr};
      }
      if (xt && yt) return traced(ad::add(lhs(), rhs()));
      if (xt && yn) return traced(ad::scalar_add(lhs(), *yn));
      if (xn && yt) return traced(ad::scalar_add(rhs(), *xn));
      throw mismatch();
    case B::Sub:
      if (xn && yn) return {*xn - *yn, nullptr};
      if (xt && yt) return traced(ad::sub(lhs(), rhs()));
      if (xt && yn) return traced(ad::scalar_add(lhs(), -*yn));
      if (xn && yt) return traced(ad::scalar_add(ad::neg(rhs()), *xn));
      throw mismatch();
    case B::Mul:
      if (xn && yn) return {*xn * *yn, nullptr};
      if (xt && yt) return traced(ad::hadamard(lhs(), rhs()));
      if (xt && yn) return traced(ad::scalar_mul(lhs(), *yn));
      if (xn && yt) return traced(ad::scalar_mul(rhs(), *xn));
      throw mismatch();
    case B::Div:
      if (xn && yn) {
        if (*yn == 0.0) throw RuntimeError("division by zero");
        return {*xn / *yn, nullptr};
      }
      if (xt && yn) {
        if (*yn == 0.0) throw RuntimeError("division by zero");
        return traced(ad::scalar_mul(lhs(), 1.0 / *yn));
      }
      throw mismatch();
    case B::MatMul:
      if (xt && yt) return traced(ad::matmul_t(lhs(), rhs()));
      throw TypeError(std::string("'@' needs two tensors, got ") + type_name(x) + " and " +
                      type_name(y));
    case B::And:
    case B::Or: {
      bool l = truthy(x);
      bool r = truthy(y);
      return {op == B::And ? (l && r) : (l || r), nullptr};
    }
  }
  throw RuntimeError("unknown operator");
}

void bind_value(Frame& f, Bindings& store, const std::string& key, Result r) {
  if (auto* t = std::get_if<TensorPtr>(&r.value)) {
    if ((*t)->is_parameter()) (*t)->bind_name(key);
    if (recordable(r.node)) thread_tape().push_assignment(key, r.node);
  }
  bool created = store.set(key, std::move(r.value));
  if (created && f.interp->hooks().on_bind) f.interp->hooks().on_bind(key);
}

}  // namespace detail

// ---- lowering ---------------------------------------------------------------

Code Compiler::lower_block(const ast::Block& block) {
  Code code;
  code.reserve(block.size());
  for (const auto& s : block) code.push_back(lower_statement(*s));
  return code;
}

std::vector<ExprCode> Compiler::lower_args(const std::vector<ast::ExprPtr>& args) {
  std::vector<ExprCode> out;
  out.reserve(args.size());
  for (const auto& a : args) out.push_back(lower_expression(*a));
  return out;
}

namespace {

std::vector<Result> evaluate_all(const std::vector<ExprCode>& codes, Frame& f) {
  std::vector<Result> out;
  out.reserve(codes.size());
  for (const auto& c : codes) out.push_back(c(f));
  return out;
}

}  // namespace

ExprCode Compiler::lower_expression(const ast::Expr& expr) {
  const int line = expr.line;
  if (auto* n = ast::get_if<ast::NumberLit>(expr)) {
    double v = n->value;
    return [v](Frame&) { return Result{v, nullptr}; };
  }
  if (auto* s = ast::get_if<ast::StringLit>(expr)) {
    std::string v = s->value;
    return [v](Frame&) { return Result{v, nullptr}; };
  }
  if (auto* b = ast::get_if<ast::BoolLit>(expr)) {
    bool v = b->value;
    return [v](Frame&) { return Result{v, nullptr}; };
  }
  if (auto* v = ast::get_if<ast::Variable>(expr)) {
    std::string name = v->name;
    return [name](Frame& f) { return Result{read_variable(f, name), nullptr}; };
  }
  if (auto* sa = ast::get_if<ast::SelfAccess>(expr)) {
    std::string attr = sa->attribute;
    return [attr](Frame& f) {
      ObjectInstance& self = require_self(f);
      auto v = self.attributes().get(self.key(attr));
      if (!v) {
        throw RuntimeError("undefined attribute 'self." + attr + "' (" + self.key(attr) + ")");
      }
      return Result{std::move(*v), nullptr};
    };
  }
  if (auto* u = ast::get_if<ast::Unary>(expr)) {
    ExprCode operand = lower_expression(*u->operand);
    if (u->op == ast::UnaryOp::Not) {
      return [operand](Frame& f) { return Result{!detail::truthy(operand(f).value), nullptr}; };
    }
    return [operand](Frame& f) {
      Result r = operand(f);
      if (auto* d = std::get_if<double>(&r.value)) return Result{-*d, nullptr};
      ad::Var v = detail::as_var(r, "unary '-'");
      ad::Var out = ad::neg(v);
      return Result{std::move(out.value), std::move(out.node)};
    };
  }
  if (auto* b = ast::get_if<ast::Binary>(expr)) {
    ExprCode l = lower_expression(*b->left);
    ExprCode r = lower_expression(*b->right);
    ast::BinaryOp op = b->op;
    if (op == ast::BinaryOp::And || op == ast::BinaryOp::Or) {
      bool is_and = op == ast::BinaryOp::And;
      return [l, r, is_and](Frame& f) {
        bool lv = detail::truthy(l(f).value);
        if (is_and != lv) return Result{lv, nullptr};
        return Result{detail::truthy(r(f).value), nullptr};
      };
    }
    return [l, r, op](Frame& f) {
      Result a = l(f);
      Result c = r(f);
      return detail::apply_binary(op, a, c);
    };
  }
  if (auto* c = ast::get_if<ast::Call>(expr)) return lower_call(*c, line);
  if (auto* m = ast::get_if<ast::MethodCall>(expr)) return lower_method_call(*m, line);
  throw RuntimeError("unsupported expression", line);
}

ExprCode Compiler::lower_call(const ast::Call& c, int line) {
  auto args = lower_args(c.args);
  std::string name = c.callee;
  const bool user_defined = interp_.function(name) || interp_.class_record(name);
  if (!user_defined) {
    auto it = builtin_table().find(name);
    if (it != builtin_table().end()) {
      const BuiltinSpec* spec = &it->second;
      return [spec, args, name](Frame& f) {
        if (args.size() < spec->min_args || args.size() > spec->max_args) {
          std::string expected = spec->min_args == spec->max_args
                                     ? std::to_string(spec->min_args)
                                     : std::to_string(spec->min_args) + " to " +
                                           std::to_string(spec->max_args);
          throw RuntimeError(name + "() takes " + expected + " argument(s) but " +
                             std::to_string(args.size()) + " were given");
        }
        std::vector<Result> values = evaluate_all(args, f);
        return spec->fn(f, values);
      };
    }
  }
  // user functions and classes bind late, at call time
  return [args, name, line](Frame& f) {
    if (const FunctionRecord* fn = f.interp->function(name)) {
      return Result{f.interp->call_function(*fn, nullptr, evaluate_all(args, f), f, line), nullptr};
    }
    if (ClassRecord* cls = f.interp->class_record(name)) {
      return Result{f.interp->instantiate(*cls, evaluate_all(args, f), f, line), nullptr};
    }
    throw RuntimeError("undefined function '" + name + "'");
  };
}

ExprCode Compiler::lower_method_call(const ast::MethodCall& c, int line) {
  ExprCode object = c.object ? lower_expression(*c.object) : ExprCode{};
  auto args = lower_args(c.args);
  std::string method = c.method;
  return [object, args, method, line](Frame& f) {
    ObjectPtr holder;
    ObjectInstance* obj;
    if (object) {
      Result r = object(f);
      if (std::holds_alternative<None>(r.value)) {
        throw RuntimeError("method '" + method + "' called on none");
      }
      auto* o = std::get_if<ObjectPtr>(&r.value);
      if (!o) {
        throw TypeError("method '" + method + "' called on a " + type_name(r.value) +
                        " value");
      }
      holder = *o;
      obj = holder.get();
    } else {
      obj = &require_self(f);
    }
    const FunctionRecord* fn = obj->class_record().method(method);
    if (!fn) {
      throw RuntimeError("class '" + obj->class_record().name() + "' has no method '" + method +
                         "'");
    }
    return Result{f.interp->call_function(*fn, obj, evaluate_all(args, f), f, line), nullptr};
  };
}

StmtCode Compiler::lower_assign(const ast::Assign& a, int, bool direct_async) {
  ExprCode value = lower_expression(*a.value);
  auto compound = a.compound;
  if (auto* v = ast::get_if<ast::Variable>(*a.target)) {
    std::string name = v->name;
    std::set<std::string> reads;
    collect_reads(*a.value, reads);
    const bool reads_target = reads.count(name) != 0;
    return [value, compound, name, reads_target, direct_async](Frame& f) {
      Result rhs = value(f);
      Scope* target = nullptr;
      for (Scope* s = f.scope; s; s = s->parent()) {
        if (s->bindings().contains(s->key(name))) {
          target = s;
          break;
        }
      }
      if (!target) target = direct_async && f.scope->parent() ? f.scope->parent() : f.scope;
      const bool shared = target != f.scope || target->active_tasks.load() > 0;
      store(f, target->bindings(), target->key(name), name, std::move(rhs), compound, shared,
            reads_target);
      return Flow::Next;
    };
  }
  auto* sa = ast::get_if<ast::SelfAccess>(*a.target);
  if (!sa) throw RuntimeError("invalid assignment target");
  std::string attr = sa->attribute;
  const bool reads_target = reads_attribute(*a.value, attr);
  return [value, compound, attr, reads_target](Frame& f) {
    ObjectInstance& self = require_self(f);
    Result rhs = value(f);
    store(f, self.attributes(), self.key(attr), "self." + attr, std::move(rhs), compound,
          f.in_task, reads_target);
    return Flow::Next;
  };
}

StmtCode Compiler::lower_finish(const ast::Finish& fin, int) {
  auto tasks = std::make_shared<std::vector<std::shared_ptr<const TaskCode>>>();
  for (const auto& s : fin.async_stmts) tasks->push_back(make_task(*this, *s));
  auto serial = std::make_shared<Code>(lower_block(fin.serial));
  return [tasks, serial](Frame& f) {
    ActiveTasks active(f.scope);
    FinishScope scope;
    Flow flow = Flow::Next;
    try {
      for (const auto& t : *tasks) spawn_task(f, scope, t);
      Frame sf = f;
      sf.finish = &scope;
      flow = run_code(*serial, sf);
    } catch (...) {
      try {
        scope.join();
      } catch (...) {
      }
      throw;
    }
    scope.join();
    return flow;
  };
}

StmtCode Compiler::lower_statement(const ast::Stmt& stmt, bool direct_async) {
  const int line = stmt.line;
  StmtCode inner;
  if (auto* e = ast::get_if<ast::ExprStmt>(stmt)) {
    ExprCode code = lower_expression(*e->expr);
    inner = [code](Frame& f) {
      code(f);
      return Flow::Next;
    };
  } else if (auto* a = ast::get_if<ast::Assign>(stmt)) {
    inner = lower_assign(*a, line, direct_async);
  } else if (auto* i = ast::get_if<ast::If>(stmt)) {
    ExprCode cond = lower_expression(*i->cond);
    auto then_code = std::make_shared<Code>(lower_block(i->then_block));
    auto else_code = std::make_shared<Code>(lower_block(i->else_block));
    inner = [cond, then_code, else_code](Frame& f) {
      return run_code(detail::truthy(cond(f).value) ? *then_code : *else_code, f);
    };
  } else if (auto* w = ast::get_if<ast::While>(stmt)) {
    ExprCode cond = lower_expression(*w->cond);
    auto body = std::make_shared<Code>(lower_block(w->body));
    inner = [cond, body](Frame& f) {
      while (detail::truthy(cond(f).value)) {
        if (run_code(*body, f) == Flow::Return) return Flow::Return;
      }
      return Flow::Next;
    };
  } else if (auto* fr = ast::get_if<ast::For>(stmt)) {
    ExprCode start = lower_expression(*fr->start);
    ExprCode end = lower_expression(*fr->end);
    ExprCode step = lower_expression(*fr->step);
    auto body = std::make_shared<Code>(lower_block(fr->body));
    std::string var = fr->var;
    inner = [start, end, step, body, var](Frame& f) {
      auto bound = [](const Result& r, const char* what) {
        auto* d = std::get_if<double>(&r.value);
        if (!d) {
          throw TypeError(std::string("range ") + what + " must be a number, got " +
                          type_name(r.value));
        }
        return *d;
      };
      const double lo = bound(start(f), "start");
      const double hi = bound(end(f), "end");
      const double by = bound(step(f), "step");
      if (by == 0.0) throw RuntimeError("range step must not be zero");
      const std::string key = f.scope->key(var);
      for (double i = lo; by > 0 ? i < hi : i > hi; i += by) {
        detail::bind_value(f, f.scope->bindings(), key, Result{i, nullptr});
        if (run_code(*body, f) == Flow::Return) return Flow::Return;
      }
      return Flow::Next;
    };
  } else if (auto* r = ast::get_if<ast::Return>(stmt)) {
    ExprCode value = r->value ? lower_expression(*r->value) : ExprCode{};
    inner = [value](Frame& f) {
      Result res = value ? value(f) : Result{None{}, nullptr};
      if (std::holds_alternative<TensorPtr>(res.value) && recordable(res.node)) {
        thread_tape().push_assignment(f.scope->key("return"), res.node);
      }
      if (!f.caller) throw RuntimeError("'return' outside of a function");
      f.caller->deliver(std::move(res.value));
      return Flow::Return;
    };
  } else if (ast::get_if<ast::FunctionDef>(stmt) || ast::get_if<ast::ClassDef>(stmt)) {
    inner = [](Frame&) -> Flow {
      throw RuntimeError("definitions are only allowed at the top level of a program");
    };
  } else if (auto* fin = ast::get_if<ast::Finish>(stmt)) {
    inner = lower_finish(*fin, line);
  } else if (auto* as = ast::get_if<ast::AsyncStmt>(stmt)) {
    auto task = make_task(*this, *as->body);
    inner = [task](Frame& f) {
      if (!f.finish) throw RuntimeError("'async' outside of a running finish block");
      spawn_task(f, *f.finish, task);
      return Flow::Next;
    };
  } else {
    throw RuntimeError("unsupported statement", line);
  }
  return [inner = std::move(inner), line](Frame& f) {
    try {
      return inner(f);
    } catch (Error& e) {
      if (e.line() == 0) e.set_position(line);
      throw;
    }
  };
}

// ---- records ----------------------------------------------------------------

FunctionRecord::FunctionRecord(Interpreter& interp, const ast::FunctionDef& def, int line,
                               std::string name)
    : interp_(interp), def_(def), line_(line), name_(std::move(name)) {}

const Code& FunctionRecord::compiled() const {
  std::call_once(once_, [this] {
    code_ = Compiler(interp_).lower_block(def_.body);
    ++compile_count_;
    ++interp_.lowerings_;
    ++g_lowerings;
  });
  return code_;
}

ClassRecord::ClassRecord(Interpreter& interp, const ast::ClassDef& def)
    : interp_(interp), def_(def) {
  for (const auto& m : def.methods) {
    const auto& fd = std::get<ast::FunctionDef>(m->node);
    methods_.emplace(fd.name,
                     std::make_unique<FunctionRecord>(interp, fd, m->line, def.name + "." + fd.name));
  }
}

const FunctionRecord* ClassRecord::method(const std::string& name) const {
  auto it = methods_.find(name);
  return it == methods_.end() ? nullptr : it->second.get();
}

const FunctionRecord* ClassRecord::initializer() const {
  if (auto* m = method("init")) return m;
  return method("__init__");
}

const Code& ClassRecord::defaults() const {
  std::call_once(once_, [this] {
    Compiler c(interp_);
    for (const auto& s : def_.attribute_defaults) {
      const auto& a = std::get<ast::Assign>(s->node);
      std::string name = std::get<ast::Variable>(a.target->node).name;
      ExprCode value = c.lower_expression(*a.value);
      const int line = s->line;
      defaults_.push_back([value, name, line](Frame& f) {
        try {
          ObjectInstance& self = require_self(f);
          detail::bind_value(f, self.attributes(), self.key(name), value(f));
        } catch (Error& e) {
          if (e.line() == 0) e.set_position(line);
          throw;
        }
        return Flow::Next;
      });
    }
  });
  return defaults_;
}

// ---- interpreter ------------------------------------------------------------

Interpreter::Interpreter(ast::Program program, RuntimeOptions options)
    : program_(std::move(program)), options_(std::move(options)), rng_(options_.seed) {
  pool_ = options_.pool ? options_.pool : std::make_shared<Pool>();
  for (const auto& s : program_.top_level) {
    if (auto* fd = ast::get_if<ast::FunctionDef>(*s)) {
      functions_.emplace(fd->name, std::make_unique<FunctionRecord>(*this, *fd, s->line, fd->name));
    } else if (auto* cd = ast::get_if<ast::ClassDef>(*s)) {
      classes_.emplace(cd->name, std::make_unique<ClassRecord>(*this, *cd));
    } else {
      has_top_level_statements_ = true;
    }
  }
  global_ = std::make_unique<Scope>(new_scope_id());
  Compiler c(*this);
  for (const auto& s : program_.top_level) {
    if (ast::get_if<ast::FunctionDef>(*s) || ast::get_if<ast::ClassDef>(*s)) continue;
    top_level_.push_back(c.lower_statement(*s));
  }
}

Interpreter::~Interpreter() {
  global_.reset();
  thread_tape().clear();
}

const FunctionRecord* Interpreter::function(const std::string& name) const {
  auto it = functions_.find(name);
  return it == functions_.end() ? nullptr : it->second.get();
}

ClassRecord* Interpreter::class_record(const std::string& name) const {
  auto it = classes_.find(name);
  return it == classes_.end() ? nullptr : it->second.get();
}

int Interpreter::compile_count(const std::string& name) const {
  const FunctionRecord* fn = function(name);
  return fn ? fn->compile_count() : 0;
}

std::string Interpreter::new_scope_id() { return "s" + std::to_string(++scopes_created_); }

void Interpreter::write_line(const std::string& text) {
  std::lock_guard lock(io_mu_);
  (options_.out ? *options_.out : std::cout) << text << '\n';
}

void Interpreter::trace(const std::string& text) {
  std::lock_guard lock(io_mu_);
  (options_.err ? *options_.err : std::cerr) << text << '\n';
}

std::string Interpreter::resolve_path(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_absolute() || options_.base_dir.empty()) return path;
  return (std::filesystem::path(options_.base_dir) / p).string();
}

void Interpreter::register_parameter(const TensorPtr& t) {
  if (!t->is_parameter()) t->make_parameter("param#" + std::to_string(++param_counter_), true);
  params_.add(t);
}

Value Interpreter::call_function(const FunctionRecord& fn, ObjectInstance* self,
                                 std::vector<Result> args, Frame& caller, int line) {
  if (args.size() != fn.params().size()) {
    throw RuntimeError(fn.name() + "() takes " + std::to_string(fn.params().size()) +
                           " argument(s) but " + std::to_string(args.size()) + " were given",
                       line);
  }
  if (caller.depth >= kMaxDepth) {
    throw RuntimeError("maximum call depth exceeded in " + fn.name() + "()", line);
  }
  const Code& code = fn.compiled();
  Scope scope(new_scope_id());
  if (hooks_.on_call) hooks_.on_call(fn.name(), scope.id());
  if (options_.trace_calls) trace("call " + fn.name() + " scope=" + scope.id());
  Frame f{this, self, &scope, caller.scope, nullptr, caller.depth + 1, caller.in_task};
  for (std::size_t i = 0; i < args.size(); ++i) {
    detail::bind_value(f, scope.bindings(), scope.key(fn.params()[i]), std::move(args[i]));
  }
  run_code(code, f);
  return caller.scope->take_return();
}

ObjectPtr Interpreter::instantiate(ClassRecord& cls, std::vector<Result> args, Frame& caller,
                                   int line) {
  auto obj = std::make_shared<ObjectInstance>(cls.next_object_name(), &cls);
  const Code& defaults = cls.defaults();
  if (!defaults.empty()) {
    Scope scope(new_scope_id());
    Frame f{this, obj.get(), &scope, caller.scope, nullptr, caller.depth + 1, caller.in_task};
    run_code(defaults, f);
  }
  if (const FunctionRecord* init = cls.initializer()) {
    call_function(*init, obj.get(), std::move(args), caller, line);
  } else if (!args.empty()) {
    throw RuntimeError(cls.name() + "() takes no arguments", line);
  }
  return obj;
}

Value Interpreter::call(const std::string& name, std::vector<Value> args, bool in_task) {
  const FunctionRecord* fn = function(name);
  if (!fn) throw RuntimeError("undefined function '" + name + "'");
  Scope scope(new_scope_id());
  Frame f{this, nullptr, &scope, nullptr, nullptr, 0, in_task};
  std::vector<Result> in;
  in.reserve(args.size());
  for (auto& a : args) in.push_back(Result{std::move(a), nullptr});
  Value out = call_function(*fn, nullptr, std::move(in), f, fn->line());
  if (in_task) thread_tape().clear();
  return out;
}

void Interpreter::run(const std::string& entry) {
  const FunctionRecord* fn = function(entry);
  if (fn && !fn->params().empty()) {
    throw RuntimeError("entry function '" + entry + "' must take no arguments", fn->line());
  }
  if (!fn && entry != "main") throw RuntimeError("entry function '" + entry + "' is not defined");
  if (!fn && !has_top_level_statements_) {
    throw RuntimeError("no entry point: define main() or add top-level statements");
  }
  thread_tape().clear();
  Frame f{this, nullptr, global_.get(), nullptr, nullptr, 0, false};
  run_code(top_level_, f);
  if (fn) call_function(*fn, nullptr, {}, f, fn->line());
  thread_tape().clear();
}

int Interpreter::execute(const std::string& entry) {
  std::ostream& err = options_.err ? *options_.err : std::cerr;
  try {
    run(entry);
    return 0;
  } catch (const Error& e) {
    thread_tape().clear();
    std::lock_guard lock(io_mu_);
    err << "error: " << e.describe() << '\n';
  } catch (const std::exception& e) {
    thread_tape().clear();
    std::lock_guard lock(io_mu_);
    err << "error: " << e.what() << '\n';
  }
  return 1;
}

}  // namespace nsk
