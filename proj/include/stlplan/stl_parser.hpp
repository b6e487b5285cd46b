#ifndef STLPLAN_STL_PARSER_HPP
#define STLPLAN_STL_PARSER_HPP

#include "stlplan/stl_ast.hpp"

#include <cctype>
#include <stdexcept>
#include <string>

namespace stlplan::stl {

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(int line_, int col_, const std::string& msg)
      : std::runtime_error("parse error at " + std::to_string(line_) + ":" + std::to_string(col_) +
                           ": " + msg),
        line(line_),
        col(col_) {}
};

// Recursive-descent parser for the ASCII STL surface syntax:
//   formula := implies
//   implies := or ("->" implies)?
//   or      := and ("|" and)*
//   and     := until ("&" until)*
//   until   := unary ("U" interval unary)?
//   unary   := "!" unary | "G" interval unary | "F" interval unary
//            | "X" unary | "(" formula ")" | "true" | "false" | IDENT
//   interval:= "[" INT "," INT "]"
// G, F, X, U, true, false are reserved words; predicates may not use them.
class Parser {
 public:
  Parser(const std::string& text, const BindingTable& bindings)
      : text_(text), bindings_(bindings) {}

  FormulaPtr parse() {
    FormulaPtr f = parse_implies();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected trailing input");
    return f;
  }

 private:
  const std::string& text_;
  const BindingTable& bindings_;
  std::size_t pos_ = 0;
  int line_ = 1, col_ = 1;

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, col_, msg); }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance();
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool accept(char c) {
    if (peek() == c) {
      advance();
      return true;
    }
    return false;
  }

  void expect(char c, const std::string& what) {
    if (!accept(c)) fail("expected '" + std::string(1, c) + "' " + what);
  }

  bool accept_arrow() {
    skip_ws();
    if (pos_ + 1 < text_.size() && text_[pos_] == '-' && text_[pos_ + 1] == '>') {
      advance();
      advance();
      return true;
    }
    return false;
  }

  static bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
  static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

  // Reads an identifier if the next token is one; does not consume otherwise.
  std::string peek_ident() {
    skip_ws();
    if (pos_ >= text_.size() || !ident_start(text_[pos_])) return {};
    std::size_t e = pos_;
    while (e < text_.size() && ident_char(text_[e])) ++e;
    return text_.substr(pos_, e - pos_);
  }

  void consume_ident(const std::string& id) {
    for (std::size_t i = 0; i < id.size(); ++i) advance();
  }

  int parse_int() {
    skip_ws();
    bool negative = false;
    if (pos_ < text_.size() && text_[pos_] == '-') {
      negative = true;
      advance();
    }
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_])))
      fail("expected integer");
    long v = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      v = v * 10 + (text_[pos_] - '0');
      if (v > 1000000000L) fail("integer too large");
      advance();
    }
    if (negative) fail("malformed interval: negative bound");
    return static_cast<int>(v);
  }

  Interval parse_interval() {
    expect('[', "to open interval");
    int a = parse_int();
    expect(',', "between interval bounds");
    int b = parse_int();
    expect(']', "to close interval");
    if (a > b) fail("malformed interval: lower bound exceeds upper bound");
    return Interval{a, b};
  }

  FormulaPtr parse_implies() {
    FormulaPtr l = parse_or();
    if (accept_arrow()) return make_implies(std::move(l), parse_implies());
    return l;
  }

  FormulaPtr parse_or() {
    FormulaPtr f = parse_and();
    while (accept('|')) f = make_or(std::move(f), parse_and());
    return f;
  }

  FormulaPtr parse_and() {
    FormulaPtr f = parse_until();
    while (accept('&')) f = make_and(std::move(f), parse_until());
    return f;
  }

  FormulaPtr parse_until() {
    FormulaPtr l = parse_unary();
    if (peek_ident() == "U") {
      consume_ident("U");
      Interval iv = parse_interval();
      FormulaPtr r = parse_unary();
      return make_until(iv, std::move(l), std::move(r));
    }
    return l;
  }

  FormulaPtr parse_unary() {
    if (accept('!')) return make_not(parse_unary());
    std::string id = peek_ident();
    if (id == "G" || id == "F") {
      consume_ident(id);
      Interval iv = parse_interval();
      FormulaPtr f = parse_unary();
      return id == "G" ? make_globally(iv, std::move(f)) : make_eventually(iv, std::move(f));
    }
    if (id == "X") {
      consume_ident(id);
      return make_next(parse_unary());
    }
    if (id == "true") {
      consume_ident(id);
      return make_true();
    }
    if (id == "false") {
      consume_ident(id);
      return make_false();
    }
    if (accept('(')) {
      FormulaPtr f = parse_implies();
      expect(')', "to close group");
      return f;
    }
    if (!id.empty()) {
      if (id == "U") fail("'U' is an operator, not a predicate");
      if (!bindings_.has(id)) fail("unbound predicate name: " + id);
      consume_ident(id);
      return make_pred(id);
    }
    fail("expected formula");
  }
};

inline FormulaPtr parse_spec(const std::string& text, const BindingTable& bindings) {
  return Parser(text, bindings).parse();
}

}  // namespace stlplan::stl

#endif
