#include "langbias/expression.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace langbias {

ParseError::ParseError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

std::string variable_name(int index, int dim) {
  if (dim == 1) return "x";
  return "x" + std::to_string(index + 1);
}

namespace {

NodePtr make_const(double v) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::constant;
  n->value = v;
  return n;
}

NodePtr make_var(int index) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::variable;
  n->var = index;
  return n;
}

NodePtr make_node(NodeKind kind, NodePtr lhs, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

NodePtr make_func_raw(Func f, NodePtr arg) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::func;
  n->func = f;
  n->lhs = std::move(arg);
  return n;
}

NodePtr make_pow_raw(NodePtr base, int k) {
  auto n = std::make_shared<Node>();
  n->kind = NodeKind::pow;
  n->exponent = k;
  n->lhs = std::move(base);
  return n;
}

bool is_const(const NodePtr& n) { return n->kind == NodeKind::constant; }
bool is_value(const NodePtr& n, double v) { return is_const(n) && n->value == v; }

const char* func_name(Func f) {
  switch (f) {
    case Func::sin: return "sin";
    case Func::cos: return "cos";
    case Func::exp: return "exp";
    case Func::log: return "log";
    case Func::abs: return "abs";
    case Func::sqrt: return "sqrt";
    case Func::tanh: return "tanh";
  }
  return "?";
}

double apply_func(Func f, double a) {
  switch (f) {
    case Func::sin: return std::sin(a);
    case Func::cos: return std::cos(a);
    case Func::exp: return std::exp(a);
    case Func::log:
      if (!(a > 0.0)) throw DomainError("log of nonpositive value");
      return std::log(a);
    case Func::abs: return std::fabs(a);
    case Func::sqrt:
      if (a < 0.0) throw DomainError("sqrt of negative value");
      return std::sqrt(a);
    case Func::tanh: return std::tanh(a);
  }
  return 0.0;
}

double apply_pow(double a, int k) {
  if (a == 0.0 && k < 0) throw DomainError("division by zero");
  return std::pow(a, k);
}

double apply_div(double a, double b) {
  if (b == 0.0) throw DomainError("division by zero");
  return a / b;
}

// Constant folding is attempted only when the result is a finite number; otherwise
// the node is kept so the error surfaces at evaluation time.
bool try_fold(double v, double& out) {
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

NodePtr s_neg(NodePtr a);
NodePtr s_mul(NodePtr a, NodePtr b);

NodePtr s_add(NodePtr a, NodePtr b) {
  if (is_const(a) && is_const(b)) return make_const(a->value + b->value);
  if (is_value(a, 0.0)) return b;
  if (is_value(b, 0.0)) return a;
  if (b->kind == NodeKind::neg) return make_node(NodeKind::sub, a, b->lhs);
  return make_node(NodeKind::add, a, b);
}

NodePtr s_sub(NodePtr a, NodePtr b) {
  if (is_const(a) && is_const(b)) return make_const(a->value - b->value);
  if (is_value(b, 0.0)) return a;
  if (is_value(a, 0.0)) return s_neg(b);
  if (b->kind == NodeKind::neg) return make_node(NodeKind::add, a, b->lhs);
  return make_node(NodeKind::sub, a, b);
}

NodePtr s_neg(NodePtr a) {
  if (is_const(a)) return make_const(-a->value);
  if (a->kind == NodeKind::neg) return a->lhs;
  if (a->kind == NodeKind::mul && is_const(a->lhs)) return s_mul(make_const(-a->lhs->value), a->rhs);
  return make_node(NodeKind::neg, a);
}

NodePtr s_mul(NodePtr a, NodePtr b) {
  if (is_const(a) && is_const(b)) return make_const(a->value * b->value);
  if (is_value(a, 0.0) || is_value(b, 0.0)) return make_const(0.0);
  if (is_value(a, 1.0)) return b;
  if (is_value(b, 1.0)) return a;
  if (is_const(b)) std::swap(a, b);
  if (is_const(a)) {
    if (b->kind == NodeKind::neg) return s_mul(make_const(-a->value), b->lhs);
    if (b->kind == NodeKind::mul && is_const(b->lhs)) return s_mul(make_const(a->value * b->lhs->value), b->rhs);
    if (a->value == -1.0) return make_node(NodeKind::neg, b);
    return make_node(NodeKind::mul, a, b);
  }
  if (a->kind == NodeKind::neg) return s_neg(s_mul(a->lhs, b));
  if (b->kind == NodeKind::neg) return s_neg(s_mul(a, b->lhs));
  return make_node(NodeKind::mul, a, b);
}

NodePtr s_div(NodePtr a, NodePtr b) {
  double v;
  if (is_const(a) && is_const(b) && b->value != 0.0 && try_fold(a->value / b->value, v)) return make_const(v);
  if (is_value(a, 0.0)) return make_const(0.0);
  if (is_value(b, 1.0)) return a;
  return make_node(NodeKind::div, a, b);
}

NodePtr s_pow(NodePtr a, int k) {
  if (k == 0) return make_const(1.0);
  if (k == 1) return a;
  double v;
  if (is_const(a) && !(a->value == 0.0 && k < 0) && try_fold(std::pow(a->value, k), v)) return make_const(v);
  return make_pow_raw(a, k);
}

NodePtr s_func(Func f, NodePtr a) {
  if (is_const(a)) {
    try {
      double v;
      if (try_fold(apply_func(f, a->value), v)) return make_const(v);
    } catch (const DomainError&) {
    }
  }
  return make_func_raw(f, a);
}

NodePtr derive(const NodePtr& n, int var) {
  switch (n->kind) {
    case NodeKind::constant: return make_const(0.0);
    case NodeKind::variable: return make_const(n->var == var ? 1.0 : 0.0);
    case NodeKind::add: return s_add(derive(n->lhs, var), derive(n->rhs, var));
    case NodeKind::sub: return s_sub(derive(n->lhs, var), derive(n->rhs, var));
    case NodeKind::neg: return s_neg(derive(n->lhs, var));
    case NodeKind::mul:
      return s_add(s_mul(derive(n->lhs, var), n->rhs), s_mul(n->lhs, derive(n->rhs, var)));
    case NodeKind::div: {
      // (u/v)' = u'/v - u v'/v^2
      auto du = derive(n->lhs, var);
      auto dv = derive(n->rhs, var);
      return s_sub(s_div(du, n->rhs), s_div(s_mul(n->lhs, dv), s_pow(n->rhs, 2)));
    }
    case NodeKind::pow: {
      auto du = derive(n->lhs, var);
      const int k = n->exponent;
      return s_mul(s_mul(make_const(k), s_pow(n->lhs, k - 1)), du);
    }
    case NodeKind::func: {
      const auto& u = n->lhs;
      auto du = derive(u, var);
      if (is_value(du, 0.0)) return make_const(0.0);
      NodePtr outer;
      switch (n->func) {
        case Func::sin: outer = s_func(Func::cos, u); break;
        case Func::cos: outer = s_neg(s_func(Func::sin, u)); break;
        case Func::exp: outer = s_func(Func::exp, u); break;
        case Func::log: return s_div(du, u);
        case Func::abs: outer = s_div(u, s_func(Func::abs, u)); break;
        case Func::sqrt: return s_div(du, s_mul(make_const(2.0), s_func(Func::sqrt, u)));
        case Func::tanh: outer = s_sub(make_const(1.0), s_pow(s_func(Func::tanh, u), 2)); break;
      }
      return s_mul(outer, du);
    }
  }
  return make_const(0.0);
}

std::string format_number(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

int precedence(const Node* n) {
  switch (n->kind) {
    case NodeKind::add:
    case NodeKind::sub: return 1;
    case NodeKind::mul:
    case NodeKind::div: return 2;
    case NodeKind::neg: return 3;
    case NodeKind::pow: return 4;
    case NodeKind::constant: return n->value < 0.0 ? 3 : 5;
    default: return 5;
  }
}

void print(const Node* n, int dim, std::string& out);

void print_operand(const Node* n, int min_prec, int dim, std::string& out) {
  if (precedence(n) < min_prec) {
    out += '(';
    print(n, dim, out);
    out += ')';
  } else {
    print(n, dim, out);
  }
}

void print(const Node* n, int dim, std::string& out) {
  switch (n->kind) {
    case NodeKind::constant: out += format_number(n->value); return;
    case NodeKind::variable: out += variable_name(n->var, dim); return;
    case NodeKind::add:
      print_operand(n->lhs.get(), 1, dim, out);
      out += '+';
      print_operand(n->rhs.get(), 2, dim, out);
      return;
    case NodeKind::sub:
      print_operand(n->lhs.get(), 1, dim, out);
      out += '-';
      print_operand(n->rhs.get(), 2, dim, out);
      return;
    case NodeKind::mul:
      print_operand(n->lhs.get(), 2, dim, out);
      out += '*';
      print_operand(n->rhs.get(), 3, dim, out);
      return;
    case NodeKind::div:
      print_operand(n->lhs.get(), 2, dim, out);
      out += '/';
      print_operand(n->rhs.get(), 3, dim, out);
      return;
    case NodeKind::neg:
      out += '-';
      print_operand(n->lhs.get(), 4, dim, out);
      return;
    case NodeKind::pow:
      print_operand(n->lhs.get(), 5, dim, out);
      out += '^';
      if (n->exponent < 0)
        out += "(" + std::to_string(n->exponent) + ")";
      else
        out += std::to_string(n->exponent);
      return;
    case NodeKind::func:
      out += func_name(n->func);
      out += '(';
      print(n->lhs.get(), dim, out);
      out += ')';
      return;
  }
}

class Parser {
 public:
  Parser(std::string_view text, int dim) : s_(text), dim_(dim) {}

  NodePtr run() {
    skip();
    if (pos_ >= s_.size()) throw ParseError("empty expression", pos_);
    auto n = expr();
    skip();
    if (pos_ < s_.size()) throw ParseError(std::string("unexpected character '") + s_[pos_] + "'", pos_);
    return n;
  }

 private:
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr expr() {
    auto n = term();
    for (;;) {
      if (accept('+'))
        n = make_node(NodeKind::add, n, term());
      else if (accept('-'))
        n = make_node(NodeKind::sub, n, term());
      else
        return n;
    }
  }

  NodePtr term() {
    auto n = unary();
    for (;;) {
      if (accept('*'))
        n = make_node(NodeKind::mul, n, unary());
      else if (accept('/'))
        n = make_node(NodeKind::div, n, unary());
      else
        return n;
    }
  }

  NodePtr unary() {
    if (accept('-')) return make_node(NodeKind::neg, unary());
    if (accept('+')) return unary();
    return power();
  }

  NodePtr power() {
    auto base = primary();
    if (!accept('^')) return base;
    skip();
    const std::size_t at = pos_;
    bool paren = accept('(');
    skip();
    bool negative = false;
    if (accept('-')) negative = true;
    skip();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError("exponent must be an integer literal", at);
    if (pos_ < s_.size() && (s_[pos_] == '.' || s_[pos_] == 'e' || s_[pos_] == 'E'))
      throw ParseError("exponent must be an integer literal", at);
    int k = 0;
    auto res = std::from_chars(s_.data() + start, s_.data() + pos_, k);
    if (res.ec != std::errc()) throw ParseError("exponent out of range", start);
    if (paren && !accept(')')) throw ParseError("expected ')'", pos_);
    if (accept('^')) throw ParseError("chained exponents are not supported", pos_ - 1);
    return make_pow_raw(base, negative ? -k : k);
  }

  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      auto n = expr();
      if (!accept(')')) throw ParseError("expected ')'", pos_);
      return n;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  NodePtr number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) ++pos_;
    if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < s_.size() && (s_[p] == '+' || s_[p] == '-')) ++p;
      if (p < s_.size() && std::isdigit(static_cast<unsigned char>(s_[p]))) {
        pos_ = p;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
      }
    }
    double v = 0.0;
    auto res = std::from_chars(s_.data() + start, s_.data() + pos_, v);
    if (res.ec != std::errc() || res.ptr != s_.data() + pos_) throw ParseError("malformed number", start);
    return make_const(v);
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    const std::string name(s_.substr(start, pos_ - start));
    if (dim_ == 1 && name == "x") return make_var(0);
    if (dim_ == 2 && name == "x1") return make_var(0);
    if (dim_ == 2 && name == "x2") return make_var(1);
    if (name == "pi") return make_const(std::numbers::pi);
    static const std::array<std::pair<const char*, Func>, 7> funcs = {{{"sin", Func::sin},
                                                                        {"cos", Func::cos},
                                                                        {"exp", Func::exp},
                                                                        {"log", Func::log},
                                                                        {"abs", Func::abs},
                                                                        {"sqrt", Func::sqrt},
                                                                        {"tanh", Func::tanh}}};
    for (const auto& [fname, f] : funcs) {
      if (name != fname) continue;
      if (!accept('(')) throw ParseError("function '" + name + "' expects 1 argument in parentheses", pos_);
      skip();
      if (pos_ < s_.size() && s_[pos_] == ')') throw ParseError("arity mismatch: '" + name + "' expects 1 argument", pos_);
      auto arg = expr();
      skip();
      if (pos_ < s_.size() && s_[pos_] == ',') throw ParseError("arity mismatch: '" + name + "' expects 1 argument", pos_);
      if (!accept(')')) throw ParseError("expected ')'", pos_);
      return make_func_raw(f, arg);
    }
    throw ParseError("unknown identifier '" + name + "'", start);
  }

  std::string_view s_;
  int dim_;
  std::size_t pos_ = 0;
};

template <class Out>
void emit(const Node* n, Out& out) {
  if (n->lhs) emit(n->lhs.get(), out);
  if (n->rhs) emit(n->rhs.get(), out);
  out(n);
}

}  // namespace

Expression::Expression(NodePtr root, int dim, std::string source)
    : root_(std::move(root)), dim_(dim), source_(std::move(source)) {
  compile();
}

Expression Expression::parse(std::string_view text, int dim) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("expression dimension must be 1 or 2");
  Parser p(text, dim);
  return Expression(p.run(), dim, std::string(text));
}

void Expression::compile() {
  program_.clear();
  auto out = [this](const Node* n) {
    program_.push_back(Instr{n->kind, n->func, n->kind == NodeKind::pow ? n->exponent : n->var, n->value});
  };
  emit(root_.get(), out);
  std::size_t depth = 0;
  stack_depth_ = 0;
  for (const Instr& in : program_) {
    if (in.kind == NodeKind::constant || in.kind == NodeKind::variable)
      stack_depth_ = std::max(stack_depth_, ++depth);
    else if (in.kind != NodeKind::neg && in.kind != NodeKind::pow && in.kind != NodeKind::func)
      --depth;
  }
}

double Expression::evaluate(std::span<const double> point) const {
  if (!root_) throw std::logic_error("evaluating an empty expression");
  if (static_cast<int>(point.size()) != dim_)
    throw std::invalid_argument("point dimension " + std::to_string(point.size()) + " does not match expression dimension " +
                                std::to_string(dim_));
  std::array<double, 64> small{};
  std::vector<double> big;
  double* st = small.data();
  if (stack_depth_ > small.size()) {
    big.resize(stack_depth_);
    st = big.data();
  }
  std::size_t top = 0;
  for (const Instr& in : program_) {
    switch (in.kind) {
      case NodeKind::constant: st[top++] = in.value; break;
      case NodeKind::variable: st[top++] = point[in.arg]; break;
      case NodeKind::add: --top; st[top - 1] += st[top]; break;
      case NodeKind::sub: --top; st[top - 1] -= st[top]; break;
      case NodeKind::mul: --top; st[top - 1] *= st[top]; break;
      case NodeKind::div: --top; st[top - 1] = apply_div(st[top - 1], st[top]); break;
      case NodeKind::neg: st[top - 1] = -st[top - 1]; break;
      case NodeKind::pow: st[top - 1] = apply_pow(st[top - 1], in.arg); break;
      case NodeKind::func: st[top - 1] = apply_func(in.func, st[top - 1]); break;
    }
  }
  const double v = st[0];
  if (!std::isfinite(v)) throw DomainError("non-finite result evaluating '" + to_string() + "'");
  return v;
}

Expression Expression::differentiate(int var_index) const {
  if (var_index < 0 || var_index >= dim_) throw std::invalid_argument("variable index out of range");
  NodePtr d = derive(root_, var_index);
  Expression e(d, dim_, "");
  e.source_ = e.to_string();
  return e;
}

Expression Expression::differentiate(std::string_view var) const {
  for (int i = 0; i < dim_; ++i)
    if (var == variable_name(i, dim_)) return differentiate(i);
  throw std::invalid_argument("unknown variable '" + std::string(var) + "'");
}

std::string Expression::to_string() const {
  std::string out;
  if (root_) print(root_.get(), dim_, out);
  return out;
}

bool Expression::is_constant() const {
  if (!root_) return true;
  std::vector<const Node*> stack{root_.get()};
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (n->kind == NodeKind::variable) return false;
    if (n->lhs) stack.push_back(n->lhs.get());
    if (n->rhs) stack.push_back(n->rhs.get());
  }
  return true;
}

}  // namespace langbias
