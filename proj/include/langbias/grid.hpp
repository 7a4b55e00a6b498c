#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "langbias/expression.hpp"

namespace langbias {

enum class DomainKind { torus1d, real1d, torus2d };

struct Domain {
  DomainKind kind = DomainKind::torus1d;
  double a = 0.0, b = 0.0;  // only meaningful for real1d

  static Domain torus1d() { return {DomainKind::torus1d, 0.0, 0.0}; }
  static Domain real1d(double a, double b);
  static Domain torus2d() { return {DomainKind::torus2d, 0.0, 0.0}; }

  int dim() const { return kind == DomainKind::torus2d ? 2 : 1; }
  bool periodic() const { return kind != DomainKind::real1d; }
  std::string name() const;
  bool operator==(const Domain&) const = default;
};

class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Uniform grid. Torus coordinates start at -pi; real1d nodes are a + i*delta, i < n.
// On torus2d the linear index is l = i + j*n with x1 = coord(i), x2 = coord(j).
class Grid {
 public:
  Grid() = default;
  Grid(Domain domain, int n);

  const Domain& domain() const { return domain_; }
  int n() const { return n_; }
  int dim() const { return domain_.dim(); }
  double spacing() const { return delta_; }
  std::size_t size() const { return dim() == 2 ? std::size_t(n_) * n_ : std::size_t(n_); }
  double origin() const { return origin_; }

  double coord(int i) const { return origin_ + i * delta_; }
  std::array<double, 2> node(std::size_t l) const;
  std::size_t index(int i, int j) const { return std::size_t(i) + std::size_t(j) * n_; }

  // Quadrature weights: delta^d on tori, trapezoid on real1d.
  double weight(std::size_t l) const;
  double cell_volume() const { return dim() == 2 ? delta_ * delta_ : delta_; }

  bool operator==(const Grid& o) const { return domain_ == o.domain_ && n_ == o.n_; }

 private:
  Domain domain_;
  int n_ = 0;
  double delta_ = 0.0;
  double origin_ = 0.0;
};

Grid build_grid(const Domain& domain, int n);

class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(Grid grid, std::vector<double> values);
  ScalarField(Grid grid, double constant);

  const Grid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t l) const { return values_[l]; }

  // Linear (1D) or bilinear (2D) interpolation; periodic on tori, clamped on real1d.
  double interpolate(std::span<const double> x) const;

  template <class F>
  ScalarField map(F&& f) const {
    std::vector<double> out(values_.size());
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = f(values_[l]);
    return ScalarField(grid_, std::move(out));
  }

 private:
  Grid grid_;
  std::vector<double> values_;
};

void require_same_grid(const ScalarField& a, const ScalarField& b);

ScalarField operator+(const ScalarField& a, const ScalarField& b);
ScalarField operator-(const ScalarField& a, const ScalarField& b);
ScalarField operator*(double s, const ScalarField& a);

// Named piecewise observables that the expression grammar cannot express.
struct Builtin {
  std::string name;
  int dim = 1;
  double (*fn)(double) = nullptr;
};
const Builtin& lookup_builtin(const std::string& name);
std::vector<std::string> builtin_names();

// A scalar function on the domain: parsed formula, named builtin or gridded values.
class Source {
 public:
  Source() = default;
  Source(Expression e) : v_(std::move(e)) {}
  Source(Builtin b) : v_(std::move(b)) {}
  Source(ScalarField f) : v_(std::move(f)) {}

  // "builtin:<name>" selects a builtin, anything else is parsed.
  static Source from_text(const std::string& text, int dim);

  bool is_expression() const { return std::holds_alternative<Expression>(v_); }
  bool is_field() const { return std::holds_alternative<ScalarField>(v_); }
  const Expression& expression() const { return std::get<Expression>(v_); }
  const ScalarField& field() const { return std::get<ScalarField>(v_); }

  double value(std::span<const double> x) const;
  std::string describe() const;

 private:
  std::variant<std::monostate, Expression, Builtin, ScalarField> v_;
};

ScalarField sample_field(const Source& s, const Grid& grid);
ScalarField sample_field(const std::string& text, const Grid& grid);

double integrate(const ScalarField& g);
double weighted_inner_product(const ScalarField& g, const ScalarField& h, const ScalarField& w);

// (e^{-V(a)} + e^{-V(b)}) delta / Z on real1d; 0 on tori.
double tail_mass_ratio(const ScalarField& V);
constexpr double kTailWarnThreshold = 1e-8;

// Smallest symmetric box [-L, L] on which e^{-V} at the ends is below 1e-12 of its max.
Domain suggest_real_box(const Expression& V, double max_half_width = 200.0);

void write_csv(const ScalarField& f, const std::string& path, const std::string& value_name = "value");
ScalarField read_csv(const std::string& path, const Grid& grid);

}  // namespace langbias
