#include "nsk/parser.hpp"

#include <charconv>
#include <set>

namespace nsk {

using namespace ast;

namespace {

std::optional<BinaryOp> binary_op(const Token& tok) {
  if (tok.kind == TokenKind::Keyword) {
    if (tok.text == "or") return BinaryOp::Or;
    if (tok.text == "and") return BinaryOp::And;
    return std::nullopt;
  }
  if (tok.kind != TokenKind::Operator) return std::nullopt;
  const std::string& t = tok.text;
  if (t == "==") return BinaryOp::Eq;
  if (t == "!=") return BinaryOp::Ne;
  if (t == "<") return BinaryOp::Lt;
  if (t == "<=") return BinaryOp::Le;
  if (t == ">") return BinaryOp::Gt;
  if (t == ">=") return BinaryOp::Ge;
  if (t == "+") return BinaryOp::Add;
  if (t == "-") return BinaryOp::Sub;
  if (t == "*") return BinaryOp::Mul;
  if (t == "/") return BinaryOp::Div;
  if (t == "@") return BinaryOp::MatMul;
  return std::nullopt;
}

std::optional<BinaryOp> compound_op(const Token& tok) {
  if (tok.kind != TokenKind::Operator) return std::nullopt;
  if (tok.text == "+=") return BinaryOp::Add;
  if (tok.text == "-=") return BinaryOp::Sub;
  if (tok.text == "*=") return BinaryOp::Mul;
  if (tok.text == "/=") return BinaryOp::Div;
  return std::nullopt;
}

bool is_comparison(BinaryOp op) { return precedence(op) == 4; }

std::string describe(const Token& tok) {
  switch (tok.kind) {
    case TokenKind::Newline:
    case TokenKind::Indent:
    case TokenKind::Dedent:
    case TokenKind::EndOfFile: return to_string(tok.kind);
    default: return "'" + tok.text + "'";
  }
}

std::string decode_string(const Token& tok) {
  std::string out;
  const std::string& raw = tok.text;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    char c = raw[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    char n = raw[++i];
    switch (n) {
      case 'n': out += '\n'; break;
      case 't': out += '\t'; break;
      case '\\': out += '\\'; break;
      case '"': out += '"'; break;
      case '\'': out += '\''; break;
      default:
        throw ParseError(std::string("unknown escape sequence '\\") + n + "'", tok.line,
                         tok.column);
    }
  }
  return out;
}

template <class T>
ExprPtr make_expr(T node, const Token& at) {
  auto e = std::make_unique<Expr>();
  e->node = std::move(node);
  e->line = at.line;
  e->column = at.column;
  return e;
}

template <class T>
StmtPtr make_stmt(T node, const Token& at) {
  auto s = std::make_unique<Stmt>();
  s->node = std::move(node);
  s->line = at.line;
  s->column = at.column;
  return s;
}

}  // namespace

Parser::Parser(std::span<const Token> tokens) : tokens_(tokens) {
  if (tokens_.empty() || tokens_.back().kind != TokenKind::EndOfFile) {
    throw ParseError("token stream must end with end of file", 0, 0);
  }
}

const Token& Parser::peek(std::size_t ahead) const {
  std::size_t i = pos_ + ahead;
  return i < tokens_.size() ? tokens_[i] : tokens_.back();
}

const Token& Parser::advance() {
  const Token& t = peek();
  if (pos_ < tokens_.size() - 1) ++pos_;
  return t;
}

bool Parser::at_end() const { return peek().kind == TokenKind::EndOfFile; }

void Parser::expect_end_of_input() {
  if (peek().kind == TokenKind::Newline) advance();
  if (!at_end()) fail("unexpected " + describe(peek()) + " after expression", {"end of input"});
}

bool Parser::accept_op(std::string_view op) {
  if (peek().is_op(op)) {
    advance();
    return true;
  }
  return false;
}

bool Parser::accept_keyword(std::string_view kw) {
  if (peek().is_keyword(kw)) {
    advance();
    return true;
  }
  return false;
}

const Token& Parser::expect_op(std::string_view op) {
  if (!peek().is_op(op)) {
    fail("expected '" + std::string(op) + "' but found " + describe(peek()),
         {"'" + std::string(op) + "'"});
  }
  return advance();
}

std::string Parser::expect_identifier(std::string_view what) {
  if (peek().kind != TokenKind::Identifier) {
    fail("expected " + std::string(what) + " but found " + describe(peek()), {"identifier"});
  }
  return advance().text;
}

void Parser::expect_newline() {
  if (peek().kind == TokenKind::Newline) {
    advance();
    return;
  }
  if (peek().kind == TokenKind::EndOfFile) return;
  fail("unexpected " + describe(peek()) + " at end of statement", {"newline"});
}

void Parser::fail(const std::string& message, std::vector<std::string> expected) const {
  fail_at(peek(), message, std::move(expected));
}

void Parser::fail_at(const Token& tok, const std::string& message,
                     std::vector<std::string> expected) const {
  std::string full = message;
  if (!expected.empty()) {
    full += " (expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) full += " or ";
      full += expected[i];
    }
    full += ")";
  }
  throw ParseError(full, tok.line, tok.column, std::move(expected));
}

Program Parser::parse_program() {
  Program program;
  std::set<std::string> names;
  while (!at_end()) {
    if (peek().kind == TokenKind::Newline) {
      advance();
      continue;
    }
    const Token& start = peek();
    StmtPtr stmt = parse_statement();
    std::string name;
    if (auto* f = get_if<FunctionDef>(*stmt)) name = f->name;
    if (auto* c = get_if<ClassDef>(*stmt)) name = c->name;
    if (!name.empty() && !names.insert(name).second) {
      fail_at(start, "duplicate top-level definition of '" + name + "'");
    }
    program.top_level.push_back(std::move(stmt));
  }
  return program;
}

StmtPtr Parser::parse_statement() {
  const Token& tok = peek();
  if (tok.kind == TokenKind::Indent) fail("unexpected indent");
  if (tok.kind == TokenKind::Keyword) {
    if (tok.text == "def") {
      if (ctx_.in_function) fail("nested function definitions are not supported");
      return parse_def(false);
    }
    if (tok.text == "class") {
      if (ctx_.in_function) fail("class definitions are only allowed at top level");
      return parse_class();
    }
    if (tok.text == "if") return parse_if();
    if (tok.text == "while") return parse_while();
    if (tok.text == "for") return parse_for();
    if (tok.text == "return") return parse_return();
    if (tok.text == "finish") return parse_finish();
    if (tok.text == "async") {
      const Token& at = peek();
      if (!ctx_.in_finish) fail("'async' is only allowed inside a finish block");
      StmtPtr body = parse_async();
      return make_stmt(AsyncStmt{std::move(body)}, at);
    }
    if (tok.text == "else") fail("'else' without a matching 'if'");
  }
  return parse_simple_statement();
}

StmtPtr Parser::parse_simple_statement() {
  const Token& start = peek();
  ExprPtr expr = parse_expression();
  const Token& next = peek();
  if (next.is_op("=") || compound_op(next)) {
    std::optional<BinaryOp> compound = compound_op(next);
    if (!get_if<Variable>(*expr) && !get_if<SelfAccess>(*expr)) {
      fail_at(next, "invalid assignment target");
    }
    advance();
    ExprPtr value = parse_expression();
    expect_newline();
    return make_stmt(Assign{std::move(expr), std::move(value), compound}, start);
  }
  expect_newline();
  return make_stmt(ExprStmt{std::move(expr)}, start);
}

Block Parser::parse_block() {
  expect_op(":");
  Block block;
  if (peek().kind != TokenKind::Newline) {
    // single-line body: `if c: x = 1`
    block.push_back(peek().is_keyword("return") ? parse_return() : parse_simple_statement());
    return block;
  }
  advance();
  if (peek().kind != TokenKind::Indent) fail("expected an indented block", {"indent"});
  advance();
  while (peek().kind != TokenKind::Dedent && !at_end()) {
    block.push_back(parse_statement());
  }
  if (peek().kind == TokenKind::Dedent) advance();
  return block;
}

StmtPtr Parser::parse_if() {
  const Token& at = advance();
  ExprPtr cond = parse_expression();
  Block then_block = parse_block();
  Block else_block;
  if (peek().is_keyword("else")) {
    advance();
    if (peek().is_keyword("if")) {
      else_block.push_back(parse_if());
    } else {
      else_block = parse_block();
    }
  }
  return make_stmt(If{std::move(cond), std::move(then_block), std::move(else_block)}, at);
}

StmtPtr Parser::parse_while() {
  const Token& at = advance();
  ExprPtr cond = parse_expression();
  Block body = parse_block();
  return make_stmt(While{std::move(cond), std::move(body)}, at);
}

StmtPtr Parser::parse_for() {
  const Token& at = advance();
  std::string var = expect_identifier("loop variable");
  if (!peek().is(TokenKind::Identifier, "in")) fail("expected 'in'", {"'in'"});
  advance();
  if (!peek().is(TokenKind::Identifier, "range")) {
    fail("for loops iterate over range(...)", {"'range'"});
  }
  const Token& range_tok = advance();
  expect_op("(");
  std::vector<ExprPtr> args = parse_args();
  if (args.empty() || args.size() > 3) {
    fail_at(range_tok, "range takes 1 to 3 arguments");
  }
  ExprPtr start, end, step;
  if (args.size() == 1) {
    start = make_expr(NumberLit{0}, range_tok);
    end = std::move(args[0]);
  } else {
    start = std::move(args[0]);
    end = std::move(args[1]);
  }
  step = args.size() == 3 ? std::move(args[2]) : make_expr(NumberLit{1}, range_tok);
  Block body = parse_block();
  return make_stmt(For{std::move(var), std::move(start), std::move(end), std::move(step),
                       std::move(body)},
                   at);
}

StmtPtr Parser::parse_def(bool as_method) {
  const Token& at = advance();
  std::string name = expect_identifier("function name");
  expect_op("(");
  std::vector<std::string> params;
  std::set<std::string> seen;
  if (!peek().is_op(")")) {
    while (true) {
      if (peek().is_keyword("self")) {
        if (!as_method || !params.empty() || !seen.empty()) {
          fail("'self' may only appear as the first parameter of a method");
        }
        advance();
        seen.insert("self");
      } else {
        std::string p = expect_identifier("parameter name");
        if (!seen.insert(p).second) fail("duplicate parameter '" + p + "'");
        params.push_back(std::move(p));
      }
      if (!accept_op(",")) break;
    }
  }
  expect_op(")");
  Context saved = ctx_;
  ctx_ = Context{true, as_method, false, false};
  Block body = parse_block();
  ctx_ = saved;
  return make_stmt(FunctionDef{std::move(name), std::move(params), std::move(body)}, at);
}

StmtPtr Parser::parse_return() {
  const Token& at = advance();
  if (!ctx_.in_function) fail_at(at, "'return' outside of a function");
  if (ctx_.in_async) fail_at(at, "'return' inside an async statement");
  ExprPtr value;
  if (peek().kind != TokenKind::Newline && !at_end()) value = parse_expression();
  expect_newline();
  return make_stmt(Return{std::move(value)}, at);
}

StmtPtr Parser::parse_async() {
  advance();  // 'async'
  const Token& next = peek();
  bool structural = next.kind == TokenKind::Newline || next.kind == TokenKind::Indent ||
                    next.kind == TokenKind::Dedent || next.kind == TokenKind::EndOfFile;
  if (structural || next.is_keyword("def") || next.is_keyword("class") ||
      next.is_keyword("return") || next.is_keyword("async") || next.is_keyword("else")) {
    fail_at(next, "'async' must govern a call, an assignment or a block statement");
  }
  Context saved = ctx_;
  ctx_.in_async = true;
  StmtPtr body = parse_statement();
  ctx_ = saved;
  return body;
}

StmtPtr Parser::parse_finish() {
  const Token& at = advance();
  expect_op(":");
  if (peek().kind != TokenKind::Newline) fail("expected a newline after 'finish:'", {"newline"});
  advance();
  if (peek().kind != TokenKind::Indent) fail("finish body is empty", {"indent"});
  advance();
  Context saved = ctx_;
  ctx_.in_finish = true;
  Finish fin;
  while (peek().kind != TokenKind::Dedent && !at_end()) {
    if (peek().is_keyword("async")) {
      fin.async_stmts.push_back(parse_async());
    } else {
      fin.serial.push_back(parse_statement());
    }
  }
  if (peek().kind == TokenKind::Dedent) advance();
  ctx_ = saved;
  return make_stmt(std::move(fin), at);
}

StmtPtr Parser::parse_class() {
  const Token& at = advance();
  if (ctx_.in_function) fail_at(at, "class definitions are only allowed at top level");
  std::string name = expect_identifier("class name");
  if (peek().is_op("(")) {
    fail("class inheritance is not supported");
  }
  expect_op(":");
  if (peek().kind != TokenKind::Newline) fail("expected a newline after class header");
  advance();
  if (peek().kind != TokenKind::Indent) fail("class body is empty", {"indent"});
  advance();
  ClassDef cls;
  cls.name = std::move(name);
  std::set<std::string> method_names;
  while (peek().kind != TokenKind::Dedent && !at_end()) {
    if (peek().is_keyword("def")) {
      const Token& def_tok = peek();
      StmtPtr m = parse_def(true);
      const std::string& mname = std::get<FunctionDef>(m->node).name;
      if (!method_names.insert(mname).second) {
        fail_at(def_tok, "duplicate method '" + mname + "' in class '" + cls.name + "'");
      }
      cls.methods.push_back(std::move(m));
      continue;
    }
    const Token& stmt_tok = peek();
    StmtPtr s = parse_simple_statement();
    auto* assign = get_if<Assign>(*s);
    if (!assign || assign->compound || !get_if<Variable>(*assign->target)) {
      fail_at(stmt_tok, "class bodies may only contain methods and 'name = value' defaults");
    }
    cls.attribute_defaults.push_back(std::move(s));
  }
  if (peek().kind == TokenKind::Dedent) advance();
  return make_stmt(std::move(cls), at);
}

ExprPtr Parser::parse_expression(int min_precedence) {
  ExprPtr left = parse_unary();
  bool left_is_comparison = false;
  while (true) {
    const Token& tok = peek();
    std::optional<BinaryOp> op = binary_op(tok);
    if (!op || precedence(*op) < min_precedence) break;
    if (is_comparison(*op) && left_is_comparison) {
      fail("chained comparisons are not supported; use 'and'");
    }
    advance();
    ExprPtr right = parse_expression(precedence(*op) + 1);
    left = make_expr(Binary{*op, std::move(left), std::move(right)}, tok);
    left_is_comparison = is_comparison(*op);
  }
  return left;
}

ExprPtr Parser::parse_unary() {
  const Token& tok = peek();
  if (tok.is_op("-")) {
    advance();
    return make_expr(Unary{UnaryOp::Neg, parse_unary()}, tok);
  }
  if (tok.is_keyword("not")) {
    advance();
    return make_expr(Unary{UnaryOp::Not, parse_unary()}, tok);
  }
  return parse_postfix();
}

ExprPtr Parser::parse_postfix() {
  ExprPtr expr = parse_primary();
  while (peek().is_op(".")) {
    const Token& dot = advance();
    std::string name = expect_identifier("method name");
    if (!peek().is_op("(")) {
      fail_at(dot, "attribute access is only supported through self; call a method instead");
    }
    advance();
    std::vector<ExprPtr> args = parse_args();
    expr = make_expr(MethodCall{std::move(expr), std::move(name), std::move(args)}, dot);
  }
  return expr;
}

std::vector<ExprPtr> Parser::parse_args() {
  // cursor is just past '('
  std::vector<ExprPtr> args;
  if (accept_op(")")) return args;
  while (true) {
    args.push_back(parse_expression());
    if (accept_op(")")) break;
    if (!accept_op(",")) fail("expected ',' or ')' in argument list", {"','", "')'"});
  }
  return args;
}

ExprPtr Parser::parse_primary() {
  const Token& tok = peek();
  switch (tok.kind) {
    case TokenKind::Number: {
      advance();
      double v = 0;
      std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), v);
      return make_expr(NumberLit{v}, tok);
    }
    case TokenKind::String:
      advance();
      return make_expr(StringLit{decode_string(tok)}, tok);
    case TokenKind::Identifier: {
      advance();
      if (accept_op("(")) {
        return make_expr(Call{tok.text, parse_args()}, tok);
      }
      return make_expr(Variable{tok.text}, tok);
    }
    case TokenKind::Keyword:
      if (tok.text == "true" || tok.text == "false") {
        advance();
        return make_expr(BoolLit{tok.text == "true"}, tok);
      }
      if (tok.text == "self") {
        if (!ctx_.in_method) fail("'self' used outside of a class method");
        advance();
        if (!peek().is_op(".")) fail_at(tok, "bare 'self' is not supported; use self.<attribute>");
        advance();
        std::string name = expect_identifier("attribute name");
        if (accept_op("(")) {
          return make_expr(MethodCall{nullptr, std::move(name), parse_args()}, tok);
        }
        return make_expr(SelfAccess{std::move(name)}, tok);
      }
      break;
    case TokenKind::Operator:
      if (tok.text == "(") {
        advance();
        ExprPtr inner = parse_expression();
        expect_op(")");
        return inner;
      }
      break;
    default: break;
  }
  fail("expected an expression but found " + describe(tok),
       {"identifier", "number", "string", "'('", "'-'", "'not'", "'self'"});
}

Program parse(std::span<const Token> tokens) { return Parser(tokens).parse_program(); }

Program parse_source(std::string_view source) {
  std::vector<Token> tokens = tokenize(source);
  return parse(tokens);
}

ExprPtr parse_expression_source(std::string_view source) {
  std::vector<Token> tokens = tokenize(source);
  Parser parser(tokens);
  ExprPtr e = parser.parse_expression();
  parser.expect_end_of_input();
  return e;
}

}  // namespace nsk
