#pragma once

#include <span>
#include <string_view>

#include "nsk/ast.hpp"
#include "nsk/lexer.hpp"

namespace nsk {

class Parser {
 public:
  explicit Parser(std::span<const Token> tokens);

  ast::Program parse_program();

  // Precedence climbing from the current token. Only operators binding at
  // least as tightly as `min_precedence` are consumed.
  ast::ExprPtr parse_expression(int min_precedence = 2);

  ast::StmtPtr parse_finish();
  ast::StmtPtr parse_class();

  bool at_end() const;
  void expect_end_of_input();

 private:
  struct Context {
    bool in_function = false;
    bool in_method = false;
    bool in_finish = false;  // lexically inside a finish body (not crossing a def)
    bool in_async = false;
  };

  const Token& peek(std::size_t ahead = 0) const;
  const Token& advance();
  bool accept_op(std::string_view op);
  bool accept_keyword(std::string_view kw);
  const Token& expect_op(std::string_view op);
  std::string expect_identifier(std::string_view what);
  void expect_newline();
  [[noreturn]] void fail(const std::string& message, std::vector<std::string> expected = {}) const;
  [[noreturn]] void fail_at(const Token& tok, const std::string& message,
                            std::vector<std::string> expected = {}) const;

  ast::StmtPtr parse_statement();
  ast::StmtPtr parse_simple_statement();
  ast::StmtPtr parse_if();
  ast::StmtPtr parse_while();
  ast::StmtPtr parse_for();
  ast::StmtPtr parse_def(bool as_method);
  ast::StmtPtr parse_return();
  ast::StmtPtr parse_async();
  ast::Block parse_block();

  ast::ExprPtr parse_unary();
  ast::ExprPtr parse_postfix();
  ast::ExprPtr parse_primary();
  std::vector<ast::ExprPtr> parse_args();

  std::span<const Token> tokens_;
  std::size_t pos_ = 0;
  Context ctx_;
};

// Parses a full program: all top-level definitions must have unique names.
ast::Program parse(std::span<const Token> tokens);

// tokenize + parse.
ast::Program parse_source(std::string_view source);

// Parses a single expression (no trailing tokens other than newline/eof).
ast::ExprPtr parse_expression_source(std::string_view source);

}  // namespace nsk
