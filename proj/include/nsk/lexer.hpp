#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nsk/error.hpp"

namespace nsk {

enum class TokenKind {
  Identifier,
  Number,
  String,
  Operator,
  Keyword,
  Newline,
  Indent,
  Dedent,
  EndOfFile,
};

const char* to_string(TokenKind kind);

struct Token {
  TokenKind kind = TokenKind::EndOfFile;
  std::string text;  // source slice; empty for structural tokens
  int line = 1;
  int column = 1;

  bool is(TokenKind k, std::string_view t) const { return kind == k && text == t; }
  bool is_op(std::string_view t) const { return is(TokenKind::Operator, t); }
  bool is_keyword(std::string_view t) const { return is(TokenKind::Keyword, t); }

  friend bool operator==(const Token&, const Token&) = default;
};

bool is_keyword(std::string_view word);

// Python-style tokenizer: emits Indent/Dedent at changes of leading
// whitespace, skips blank and comment-only lines, ignores line breaks inside
// parentheses. Always ends with EndOfFile and balanced Indent/Dedent.
std::vector<Token> tokenize(std::string_view source);

// Width of one indentation level: the first indented line's leading width in
// spaces (1 for tab-indented files), or 4 when nothing is indented. Throws
// LexError when a deeper indentation is not a multiple of that width.
int indent_width(std::string_view source);

// Renders a token stream back to source text using four spaces per level.
// tokenize(render_tokens(t)) reproduces the kinds and texts of t.
std::string render_tokens(const std::vector<Token>& tokens);

}  // namespace nsk
