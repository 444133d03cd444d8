#include "nsk/ast.hpp"

#include <charconv>
#include <sstream>

namespace nsk::ast {

const char* symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::Or: return "or";
    case BinaryOp::And: return "and";
    case BinaryOp::Eq: return "==";
    case BinaryOp::Ne: return "!=";
    case BinaryOp::Lt: return "<";
    case BinaryOp::Le: return "<=";
    case BinaryOp::Gt: return ">";
    case BinaryOp::Ge: return ">=";
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::MatMul: return "@";
  }
  return "?";
}

const char* symbol(UnaryOp op) { return op == UnaryOp::Neg ? "-" : "not"; }

int precedence(BinaryOp op) {
  switch (op) {
    case BinaryOp::Or: return 2;
    case BinaryOp::And: return 3;
    case BinaryOp::Eq:
    case BinaryOp::Ne:
    case BinaryOp::Lt:
    case BinaryOp::Le:
    case BinaryOp::Gt:
    case BinaryOp::Ge: return 4;
    case BinaryOp::Add:
    case BinaryOp::Sub: return 5;
    case BinaryOp::Mul:
    case BinaryOp::Div: return 6;
    case BinaryOp::MatMul: return 7;
  }
  return 0;
}

namespace {

std::string number_text(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

class Dumper {
 public:
  std::string str() const { return os_.str(); }

  void line(int depth, std::string_view kind, std::string_view detail, int src_line) {
    os_ << std::string(static_cast<std::size_t>(depth) * 2, ' ') << kind;
    if (!detail.empty()) os_ << ' ' << detail;
    os_ << " @" << src_line << '\n';
  }

  void expr(const Expr& e, int depth) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, NumberLit>) {
            line(depth, "number", number_text(n.value), e.line);
          } else if constexpr (std::is_same_v<T, StringLit>) {
            line(depth, "string", '"' + n.value + '"', e.line);
          } else if constexpr (std::is_same_v<T, BoolLit>) {
            line(depth, "bool", n.value ? "true" : "false", e.line);
          } else if constexpr (std::is_same_v<T, Variable>) {
            line(depth, "variable", n.name, e.line);
          } else if constexpr (std::is_same_v<T, SelfAccess>) {
            line(depth, "self", n.attribute, e.line);
          } else if constexpr (std::is_same_v<T, Unary>) {
            line(depth, "unary", symbol(n.op), e.line);
            expr(*n.operand, depth + 1);
          } else if constexpr (std::is_same_v<T, Binary>) {
            line(depth, "binary", symbol(n.op), e.line);
            expr(*n.left, depth + 1);
            expr(*n.right, depth + 1);
          } else if constexpr (std::is_same_v<T, Call>) {
            line(depth, "call", n.callee, e.line);
            for (const auto& a : n.args) expr(*a, depth + 1);
          } else if constexpr (std::is_same_v<T, MethodCall>) {
            line(depth, "method-call", n.method, e.line);
            if (n.object) {
              expr(*n.object, depth + 1);
            } else {
              line(depth + 1, "self-object", "", e.line);
            }
            for (const auto& a : n.args) expr(*a, depth + 1);
          }
        },
        e.node);
  }

  void block(std::string_view label, const Block& b, int depth, int src_line) {
    line(depth, label, "", src_line);
    for (const auto& s : b) stmt(*s, depth + 1);
  }

  void stmt(const Stmt& s, int depth) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ExprStmt>) {
            line(depth, "expr-stmt", "", s.line);
            expr(*n.expr, depth + 1);
          } else if constexpr (std::is_same_v<T, Assign>) {
            std::string op = n.compound ? std::string(symbol(*n.compound)) + "=" : "=";
            line(depth, "assign", op, s.line);
            expr(*n.target, depth + 1);
            expr(*n.value, depth + 1);
          } else if constexpr (std::is_same_v<T, If>) {
            line(depth, "if", "", s.line);
            expr(*n.cond, depth + 1);
            block("then", n.then_block, depth + 1, s.line);
            if (!n.else_block.empty()) block("else", n.else_block, depth + 1, s.line);
          } else if constexpr (std::is_same_v<T, While>) {
            line(depth, "while", "", s.line);
            expr(*n.cond, depth + 1);
            block("body", n.body, depth + 1, s.line);
          } else if constexpr (std::is_same_v<T, For>) {
            line(depth, "for", n.var, s.line);
            expr(*n.start, depth + 1);
            expr(*n.end, depth + 1);
            expr(*n.step, depth + 1);
            block("body", n.body, depth + 1, s.line);
          } else if constexpr (std::is_same_v<T, Return>) {
            line(depth, "return", "", s.line);
            if (n.value) expr(*n.value, depth + 1);
          } else if constexpr (std::is_same_v<T, FunctionDef>) {
            std::string sig = n.name + "(";
            for (std::size_t i = 0; i < n.params.size(); ++i) {
              if (i) sig += ", ";
              sig += n.params[i];
            }
            sig += ")";
            line(depth, "def", sig, s.line);
            for (const auto& b : n.body) stmt(*b, depth + 1);
          } else if constexpr (std::is_same_v<T, ClassDef>) {
            line(depth, "class", n.name, s.line);
            for (const auto& a : n.attribute_defaults) stmt(*a, depth + 1);
            for (const auto& m : n.methods) stmt(*m, depth + 1);
          } else if constexpr (std::is_same_v<T, Finish>) {
            line(depth, "finish", "", s.line);
            block("async", n.async_stmts, depth + 1, s.line);
            block("serial", n.serial, depth + 1, s.line);
          } else if constexpr (std::is_same_v<T, AsyncStmt>) {
            line(depth, "async", "", s.line);
            stmt(*n.body, depth + 1);
          }
        },
        s.node);
  }

 private:
  std::ostringstream os_;
};

}  // namespace

std::string dump(const Program& program) {
  Dumper d;
  for (const auto& s : program.top_level) d.stmt(*s, 0);
  return d.str();
}

std::string dump(const Expr& expr, int depth) {
  Dumper d;
  d.expr(expr, depth);
  return d.str();
}

}  // namespace nsk::ast
