#pragma once

// Arithmetic expressions for coefficient functions.
//
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '/') factor)*
//   factor := base ('^' factor)?
//   base   := number | variable | function '(' expr ')' | '(' expr ')' | '-' base
//
// Variables are x and u1..un, the only constant is pi, functions are
// sin, cos, exp and tanh.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bstep/error.hpp"

namespace bstep {

class Expression {
 public:
  Expression() = default;

  static Expression parse(std::string_view text);

  /// Evaluates at position x with state u (u[0] is u1).
  double evaluate(double x, std::span<const double> u = {}) const {
    if (nodes_.empty()) throw EvaluationError("evaluating an empty expression");
    return eval(root_, x, u);
  }

  const std::string& text() const noexcept { return text_; }
  bool empty() const noexcept { return nodes_.empty(); }

  /// Largest k referenced as u<k>; 0 when the expression does not read the state.
  int max_state_index() const noexcept {
    int k = 0;
    for (const auto& nd : nodes_)
      if (nd.op == Op::State) k = std::max(k, nd.index + 1);
    return k;
  }

  bool depends_on_x() const noexcept {
    for (const auto& nd : nodes_)
      if (nd.op == Op::X) return true;
    return false;
  }

 private:
  enum class Op : std::uint8_t { Number, X, State, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Exp, Tanh };
  struct Node {
    Op op = Op::Number;
    double value = 0.0;
    int index = 0;
    int lhs = -1;
    int rhs = -1;
  };

  friend class ExpressionParser;

  double eval(int id, double x, std::span<const double> u) const {
    const Node& nd = nodes_[id];
    switch (nd.op) {
      case Op::Number:
        return nd.value;
      case Op::X:
        return x;
      case Op::State:
        if (static_cast<std::size_t>(nd.index) >= u.size())
          throw EvaluationError("u" + std::to_string(nd.index + 1) + " is not available in '" + text_ + "'");
        return u[nd.index];
      case Op::Add:
        return eval(nd.lhs, x, u) + eval(nd.rhs, x, u);
      case Op::Sub:
        return eval(nd.lhs, x, u) - eval(nd.rhs, x, u);
      case Op::Mul:
        return eval(nd.lhs, x, u) * eval(nd.rhs, x, u);
      case Op::Div: {
        double num = eval(nd.lhs, x, u);
        double den = eval(nd.rhs, x, u);
        if (den == 0.0) throw EvaluationError("division by zero in '" + text_ + "'");
        return num / den;
      }
      case Op::Pow: {
        double b = eval(nd.lhs, x, u);
        double e = eval(nd.rhs, x, u);
        if (b == 0.0 && e < 0.0) throw EvaluationError("zero raised to a negative power in '" + text_ + "'");
        if (b < 0.0 && e != std::floor(e))
          throw EvaluationError("negative base with non-integer exponent in '" + text_ + "'");
        return std::pow(b, e);
      }
      case Op::Neg:
        return -eval(nd.lhs, x, u);
      case Op::Sin:
        return std::sin(eval(nd.lhs, x, u));
      case Op::Cos:
        return std::cos(eval(nd.lhs, x, u));
      case Op::Exp:
        return std::exp(eval(nd.lhs, x, u));
      case Op::Tanh:
        return std::tanh(eval(nd.lhs, x, u));
    }
    return 0.0;
  }

  std::string text_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

class ExpressionParser {
 public:
  explicit ExpressionParser(std::string_view text) : src_(text) {}

  Expression run() {
    out_.text_ = std::string(src_);
    skip_space();
    if (pos_ >= src_.size()) throw SyntaxError("empty expression", pos_);
    out_.root_ = expr();
    skip_space();
    if (pos_ < src_.size()) throw SyntaxError(std::string("unexpected '") + src_[pos_] + "'", pos_);
    return std::move(out_);
  }

 private:
  using Op = Expression::Op;

  int add(Op op, int lhs = -1, int rhs = -1, double value = 0.0, int index = 0) {
    out_.nodes_.push_back({op, value, index, lhs, rhs});
    return static_cast<int>(out_.nodes_.size()) - 1;
  }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  int expr() {
    int lhs = term();
    for (;;) {
      if (accept('+')) {
        lhs = add(Op::Add, lhs, term());
      } else if (accept('-')) {
        lhs = add(Op::Sub, lhs, term());
      } else {
        return lhs;
      }
    }
  }

  int term() {
    int lhs = factor();
    for (;;) {
      if (accept('*')) {
        lhs = add(Op::Mul, lhs, factor());
      } else if (accept('/')) {
        lhs = add(Op::Div, lhs, factor());
      } else {
        return lhs;
      }
    }
  }

  int factor() {
    int b = base();
    if (accept('^')) return add(Op::Pow, b, factor());
    return b;
  }

  int base() {
    skip_space();
    if (pos_ >= src_.size()) throw SyntaxError("unexpected end of expression", pos_);
    char c = src_[pos_];
    if (c == '-') {
      ++pos_;
      return add(Op::Neg, base());
    }
    if (c == '(') {
      ++pos_;
      int inner = expr();
      if (!accept(')')) throw SyntaxError("expected ')'", pos_);
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw SyntaxError(std::string("unexpected '") + c + "'", pos_);
  }

  int number() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) ++pos_;
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
      if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      } else {
        pos_ = save;
      }
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(src_.data() + start, src_.data() + pos_, v);
    if (ec != std::errc() || ptr != src_.data() + pos_) throw SyntaxError("malformed number", start);
    return add(Op::Number, -1, -1, v);
  }

  int identifier() {
    std::size_t start = pos_;
    while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) ++pos_;
    std::string_view name = src_.substr(start, pos_ - start);
    if (name == "x") return add(Op::X);
    if (name == "pi") return add(Op::Number, -1, -1, std::numbers::pi);
    if (name.size() > 1 && name[0] == 'u' && name[1] != '0') {
      bool digits = true;
      for (char d : name.substr(1)) digits = digits && std::isdigit(static_cast<unsigned char>(d));
      if (digits) {
        int k = 0;
        std::from_chars(name.data() + 1, name.data() + name.size(), k);
        return add(Op::State, -1, -1, 0.0, k - 1);
      }
    }
    Op fn;
    if (name == "sin") {
      fn = Op::Sin;
    } else if (name == "cos") {
      fn = Op::Cos;
    } else if (name == "exp") {
      fn = Op::Exp;
    } else if (name == "tanh") {
      fn = Op::Tanh;
    } else {
      throw SyntaxError("unknown identifier '" + std::string(name) + "'", start);
    }
    if (!accept('(')) throw SyntaxError("expected '(' after " + std::string(name), pos_);
    int arg = expr();
    if (!accept(')')) throw SyntaxError("expected ')'", pos_);
    return add(fn, arg);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Expression out_;
};

inline Expression Expression::parse(std::string_view text) { return ExpressionParser(text).run(); }

/// Free-function spelling used by the configuration layer.
inline Expression parse_expression(std::string_view text) { return Expression::parse(text); }

}  // namespace bstep
