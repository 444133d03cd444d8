#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace nsk::ast {

enum class BinaryOp { Or, And, Eq, Ne, Lt, Le, Gt, Ge, Add, Sub, Mul, Div, MatMul };
enum class UnaryOp { Neg, Not };

const char* symbol(BinaryOp op);
const char* symbol(UnaryOp op);

// Binding strength, low to high: or 2, and 3, comparisons 4, + - 5,
// * / 6, @ 7. Assignment (1) exists only at statement level.
int precedence(BinaryOp op);
inline constexpr int kAssignPrecedence = 1;
inline constexpr int kUnaryPrecedence = 8;
inline constexpr int kPostfixPrecedence = 9;

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct NumberLit {
  double value;
};
struct StringLit {
  std::string value;
};
struct BoolLit {
  bool value;
};
struct Variable {
  std::string name;
};
// self.<attribute>
struct SelfAccess {
  std::string attribute;
};
struct Unary {
  UnaryOp op;
  ExprPtr operand;
};
struct Binary {
  BinaryOp op;
  ExprPtr left;
  ExprPtr right;
};
struct Call {
  std::string callee;
  std::vector<ExprPtr> args;
};
// <object>.<method>(args); object == nullptr means `self`.
struct MethodCall {
  ExprPtr object;
  std::string method;
  std::vector<ExprPtr> args;
};

struct Expr {
  std::variant<NumberLit, StringLit, BoolLit, Variable, SelfAccess, Unary, Binary, Call,
               MethodCall>
      node;
  int line = 0;
  int column = 0;
};

struct Stmt;
using StmtPtr = std::unique_ptr<Stmt>;
using Block = std::vector<StmtPtr>;

struct ExprStmt {
  ExprPtr expr;
};
// `target = value`, or a compound form when `compound` is set (+= -= *= /=).
struct Assign {
  ExprPtr target;  // Variable or SelfAccess
  ExprPtr value;
  std::optional<BinaryOp> compound;
};
struct If {
  ExprPtr cond;
  Block then_block;
  Block else_block;  // may be empty
};
struct While {
  ExprPtr cond;
  Block body;
};
// for <var> in range(start, end, step)
struct For {
  std::string var;
  ExprPtr start;
  ExprPtr end;
  ExprPtr step;
  Block body;
};
struct Return {
  ExprPtr value;  // null for a bare return
};
struct FunctionDef {
  std::string name;
  std::vector<std::string> params;
  Block body;
};
struct ClassDef {
  std::string name;
  std::vector<StmtPtr> attribute_defaults;  // Assign statements
  std::vector<StmtPtr> methods;             // FunctionDef statements
};
struct Finish {
  Block serial;
  Block async_stmts;
};
// An `async` statement nested inside a loop or branch of a finish body. It
// joins the innermost enclosing finish at run time.
struct AsyncStmt {
  StmtPtr body;
};

struct Stmt {
  std::variant<ExprStmt, Assign, If, While, For, Return, FunctionDef, ClassDef, Finish,
               AsyncStmt>
      node;
  int line = 0;
  int column = 0;
};

struct Program {
  std::vector<StmtPtr> top_level;
};

template <class T>
const T* get_if(const Expr& e) {
  return std::get_if<T>(&e.node);
}
template <class T>
const T* get_if(const Stmt& s) {
  return std::get_if<T>(&s.node);
}

// One node per line: "<indent><kind> <op/name> @<line>", two spaces per depth.
// Assignments render as a binary `=` node whose children are target and value.
std::string dump(const Program& program);
std::string dump(const Expr& expr, int depth = 0);

}  // namespace nsk::ast
