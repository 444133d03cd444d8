#include "nsk/lexer.hpp"

#include <array>
#include <charconv>
#include <cmath>

namespace nsk {

const char* to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::Identifier: return "identifier";
    case TokenKind::Number: return "number";
    case TokenKind::String: return "string";
    case TokenKind::Operator: return "operator";
    case TokenKind::Keyword: return "keyword";
    case TokenKind::Newline: return "newline";
    case TokenKind::Indent: return "indent";
    case TokenKind::Dedent: return "dedent";
    case TokenKind::EndOfFile: return "end of file";
  }
  return "?";
}

namespace {

constexpr std::array kKeywords = {
    "def", "class", "if",   "else", "for", "while", "return", "finish",
    "async", "self", "and", "or",   "not", "true",  "false",
};

// Longest match first.
constexpr std::array kTwoCharOps = {"==", "!=", "<=", ">=", "+=", "-=", "*=", "/="};
constexpr std::string_view kOneCharOps = "=<>+-*/@(),.:";

bool is_ident_start(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_char(char c) { return is_ident_start(c) || is_digit(c); }

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    int line_no = 1;
    std::size_t start = 0;
    while (start < src_.size()) {
      std::size_t end = src_.find('\n', start);
      if (end == std::string_view::npos) end = src_.size();
      std::string_view line = src_.substr(start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lex_line(line, line_no);
      start = end + 1;
      ++line_no;
    }
    if (paren_depth_ > 0) {
      throw LexError("unclosed parenthesis", open_paren_line_, open_paren_col_);
    }
    if (logical_has_tokens_) push(TokenKind::Newline, "", last_line_, last_col_);
    while (stack_.size() > 1) {
      stack_.pop_back();
      push(TokenKind::Dedent, "", line_no, 1);
    }
    push(TokenKind::EndOfFile, "", line_no, 1);
    return std::move(out_);
  }

  int unit() const { return unit_ == 0 ? 4 : unit_; }

 private:
  void push(TokenKind kind, std::string text, int line, int col) {
    out_.push_back(Token{kind, std::move(text), line, col});
  }

  void lex_line(std::string_view line, int line_no) {
    std::size_t i = 0;
    bool has_space = false;
    bool has_tab = false;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) {
      (line[i] == ' ' ? has_space : has_tab) = true;
      ++i;
    }
    if (i == line.size() || line[i] == '#') return;  // blank or comment-only

    if (paren_depth_ == 0) {
      handle_indentation(static_cast<int>(i), has_space, has_tab, line_no);
    }
    lex_tokens(line, i, line_no);
    if (paren_depth_ == 0 && logical_has_tokens_) {
      push(TokenKind::Newline, "", line_no, static_cast<int>(line.size()) + 1);
      logical_has_tokens_ = false;
    }
  }

  void handle_indentation(int width, bool has_space, bool has_tab, int line_no) {
    if (has_space && has_tab) {
      throw LexError("indentation mixes tabs and spaces", line_no, 1);
    }
    if (width > 0) {
      char ch = has_tab ? '\t' : ' ';
      if (style_ == 0) {
        style_ = ch;
        unit_ = has_tab ? 1 : width;
      } else if (style_ != ch) {
        throw LexError("indentation mixes tabs and spaces", line_no, 1);
      }
      if (width % unit_ != 0) {
        throw LexError("indentation of " + std::to_string(width) +
                           " is not a multiple of the indent width " + std::to_string(unit_),
                       line_no, 1);
      }
    }
    if (width > stack_.back()) {
      stack_.push_back(width);
      push(TokenKind::Indent, "", line_no, 1);
      return;
    }
    while (width < stack_.back()) {
      stack_.pop_back();
      push(TokenKind::Dedent, "", line_no, 1);
    }
    if (width != stack_.back()) {
      throw LexError("dedent does not match any enclosing indentation level", line_no, 1);
    }
  }

  void lex_tokens(std::string_view line, std::size_t i, int line_no) {
    auto col = [](std::size_t idx) { return static_cast<int>(idx) + 1; };
    while (i < line.size()) {
      char c = line[i];
      if (c == ' ' || c == '\t') {
        ++i;
        continue;
      }
      if (c == '#') break;
      std::size_t begin = i;
      if (is_ident_start(c)) {
        while (i < line.size() && is_ident_char(line[i])) ++i;
        std::string word(line.substr(begin, i - begin));
        TokenKind kind = is_keyword(word) ? TokenKind::Keyword : TokenKind::Identifier;
        emit(kind, std::move(word), line_no, col(begin));
      } else if (is_digit(c)) {
        i = lex_number(line, i, line_no);
      } else if (c == '"' || c == '\'') {
        i = lex_string(line, i, line_no);
      } else {
        std::string_view rest = line.substr(i);
        bool matched = false;
        for (std::string_view op : kTwoCharOps) {
          if (rest.starts_with(op)) {
            emit(TokenKind::Operator, std::string(op), line_no, col(i));
            i += 2;
            matched = true;
            break;
          }
        }
        if (!matched) {
          if (kOneCharOps.find(c) == std::string_view::npos) {
            std::string shown = static_cast<unsigned char>(c) < 0x80 ? std::string(1, c)
                                                                        : "non-ASCII byte";
            throw LexError("unexpected character '" + shown + "'", line_no, col(i));
          }
          if (c == '(') {
            if (paren_depth_++ == 0) {
              open_paren_line_ = line_no;
              open_paren_col_ = col(i);
            }
          } else if (c == ')') {
            if (paren_depth_ == 0) throw LexError("unmatched ')'", line_no, col(i));
            --paren_depth_;
          }
          emit(TokenKind::Operator, std::string(1, c), line_no, col(i));
          ++i;
        }
      }
    }
    last_line_ = line_no;
    last_col_ = static_cast<int>(line.size()) + 1;
  }

  std::size_t lex_number(std::string_view line, std::size_t i, int line_no) {
    std::size_t begin = i;
    while (i < line.size() && is_digit(line[i])) ++i;
    if (i + 1 < line.size() && line[i] == '.' && is_digit(line[i + 1])) {
      ++i;
      while (i < line.size() && is_digit(line[i])) ++i;
    }
    if (i < line.size() && (line[i] == 'e' || line[i] == 'E')) {
      std::size_t j = i + 1;
      if (j < line.size() && (line[j] == '+' || line[j] == '-')) ++j;
      if (j < line.size() && is_digit(line[j])) {
        while (j < line.size() && is_digit(line[j])) ++j;
        i = j;
      }
    }
    if (i < line.size() && is_ident_start(line[i])) {
      throw LexError("malformed number literal", line_no, static_cast<int>(begin) + 1);
    }
    std::string_view text = line.substr(begin, i - begin);
    double value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || !std::isfinite(value)) {
      throw LexError("number literal out of range", line_no, static_cast<int>(begin) + 1);
    }
    emit(TokenKind::Number, std::string(text), line_no, static_cast<int>(begin) + 1);
    return i;
  }

  std::size_t lex_string(std::string_view line, std::size_t i, int line_no) {
    std::size_t begin = i;
    char quote = line[i++];
    while (i < line.size() && line[i] != quote) {
      if (line[i] == '\\') ++i;
      ++i;
    }
    if (i >= line.size()) {
      throw LexError("unterminated string literal", line_no, static_cast<int>(begin) + 1);
    }
    ++i;
    emit(TokenKind::String, std::string(line.substr(begin, i - begin)), line_no,
         static_cast<int>(begin) + 1);
    return i;
  }

  void emit(TokenKind kind, std::string text, int line, int col) {
    push(kind, std::move(text), line, col);
    logical_has_tokens_ = true;
  }

  std::string_view src_;
  std::vector<Token> out_;
  std::vector<int> stack_{0};
  char style_ = 0;
  int unit_ = 0;
  int paren_depth_ = 0;
  int open_paren_line_ = 0;
  int open_paren_col_ = 0;
  bool logical_has_tokens_ = false;
  int last_line_ = 1;
  int last_col_ = 1;
};

}  // namespace

bool is_keyword(std::string_view word) {
  for (std::string_view k : kKeywords) {
    if (k == word) return true;
  }
  return false;
}

std::vector<Token> tokenize(std::string_view source) { return Lexer(source).run(); }

int indent_width(std::string_view source) {
  Lexer lexer(source);
  lexer.run();
  return lexer.unit();
}

std::string render_tokens(const std::vector<Token>& tokens) {
  std::string out;
  int depth = 0;
  bool line_start = true;
  for (const Token& tok : tokens) {
    switch (tok.kind) {
      case TokenKind::Indent: ++depth; break;
      case TokenKind::Dedent: --depth; break;
      case TokenKind::Newline:
        out += '\n';
        line_start = true;
        break;
      case TokenKind::EndOfFile: break;
      default:
        if (line_start) {
          out.append(static_cast<std::size_t>(depth) * 4, ' ');
          line_start = false;
        } else {
          out += ' ';
        }
        out += tok.text;
    }
  }
  return out;
}

}  // namespace nsk
