#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace langbias {

// Malformed text. offset is the byte position where parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// log of a nonpositive number, division by zero, overflow, ...
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeKind { constant, variable, add, sub, mul, div, pow, neg, func };
enum class Func { sin, cos, exp, log, abs, sqrt, tanh };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind;
  double value = 0.0;   // constant
  int var = 0;          // variable index
  int exponent = 0;     // pow
  Func func = Func::sin;
  NodePtr lhs, rhs;     // unary nodes use lhs
};

class Expression {
 public:
  Expression() = default;

  static Expression parse(std::string_view text, int dim);

  double evaluate(std::span<const double> point) const;
  double evaluate(double x) const { return evaluate(std::span<const double>(&x, 1)); }
  double evaluate(double x1, double x2) const {
    const double p[2] = {x1, x2};
    return evaluate(std::span<const double>(p, 2));
  }

  // var is "x" in 1D and "x1"/"x2" in 2D.
  Expression differentiate(std::string_view var) const;
  Expression differentiate(int var_index) const;

  std::string to_string() const;
  int dim() const { return dim_; }
  bool is_constant() const;
  const Node* root() const { return root_.get(); }
  const std::string& source() const { return source_; }

 private:
  Expression(NodePtr root, int dim, std::string source);
  void compile();

  struct Instr {
    NodeKind kind;
    Func func;
    int arg;
    double value;
  };

  NodePtr root_;
  int dim_ = 1;
  std::string source_;
  std::vector<Instr> program_;
  std::size_t stack_depth_ = 0;
};

std::string variable_name(int index, int dim);

}  // namespace langbias
