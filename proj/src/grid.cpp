#include "langbias/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace langbias {

namespace {

constexpr double kPi = std::numbers::pi;

double example_5_3_f(double x) { return std::fabs(x) >= kPi / 2 ? std::sin(4.0 * std::fabs(x)) : 0.0; }

// Odd sign observable. x = -pi is the jump of sgn across the identified endpoints;
// it takes the midpoint value 0.
double example_A1_f(double x) {
  if (std::fabs(x) < kPi / 2 || std::fabs(x) >= kPi) return 0.0;
  return x > 0 ? 1.0 : -1.0;
}

const std::vector<Builtin>& builtins() {
  static const std::vector<Builtin> b = {{"example_5_3_f", 1, &example_5_3_f}, {"example_A1_f", 1, &example_A1_f}};
  return b;
}

double wrap_index(double t, int n) {
  t = std::fmod(t, double(n));
  if (t < 0) t += n;
  return t;
}

}  // namespace

Domain Domain::real1d(double a, double b) {
  if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) throw std::invalid_argument("real1d domain needs finite a < b");
  return {DomainKind::real1d, a, b};
}

std::string Domain::name() const {
  switch (kind) {
    case DomainKind::torus1d: return "torus1d";
    case DomainKind::real1d: return "real1d";
    case DomainKind::torus2d: return "torus2d";
  }
  return "?";
}

Grid::Grid(Domain domain, int n) : domain_(domain), n_(n) {
  if (n < 4) throw std::invalid_argument("grid needs n >= 4, got " + std::to_string(n));
  if (domain.periodic()) {
    delta_ = 2.0 * kPi / n;
    origin_ = -kPi;
  } else {
    if (!(domain.a < domain.b)) throw std::invalid_argument("real1d domain needs a < b");
    delta_ = (domain.b - domain.a) / n;
    origin_ = domain.a;
  }
}

Grid build_grid(const Domain& domain, int n) { return Grid(domain, n); }

std::array<double, 2> Grid::node(std::size_t l) const {
  if (dim() == 1) return {coord(int(l)), 0.0};
  const int j = int(l / std::size_t(n_));
  const int i = int(l - std::size_t(j) * n_);
  return {coord(i), coord(j)};
}

double Grid::weight(std::size_t l) const {
  if (domain_.periodic()) return cell_volume();
  return (l == 0 || l + 1 == std::size_t(n_)) ? 0.5 * delta_ : delta_;
}

ScalarField::ScalarField(Grid grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
  if (values_.size() != grid_.size())
    throw GridMismatch("field length " + std::to_string(values_.size()) + " does not match grid size " +
                       std::to_string(grid_.size()));
  for (std::size_t l = 0; l < values_.size(); ++l)
    if (!std::isfinite(values_[l])) throw DomainError("non-finite field value at node " + std::to_string(l));
}

ScalarField::ScalarField(Grid grid, double constant) : ScalarField(grid, std::vector<double>(grid.size(), constant)) {}

double ScalarField::interpolate(std::span<const double> x) const {
  const int n = grid_.n();
  const double d = grid_.spacing();
  if (grid_.dim() == 1) {
    double t = (x[0] - grid_.origin()) / d;
    if (grid_.domain().periodic()) {
      t = wrap_index(t, n);
      const int i = std::min(int(t), n - 1);
      const double s = t - i;
      return (1 - s) * values_[i] + s * values_[(i + 1) % n];
    }
    if (t <= 0) return values_.front();
    if (t >= n - 1) return values_.back();
    const int i = int(t);
    const double s = t - i;
    return (1 - s) * values_[i] + s * values_[i + 1];
  }
  const double t1 = wrap_index((x[0] - grid_.origin()) / d, n);
  const double t2 = wrap_index((x[1] - grid_.origin()) / d, n);
  const int i = std::min(int(t1), n - 1), j = std::min(int(t2), n - 1);
  const double s = t1 - i, r = t2 - j;
  const int i1 = (i + 1) % n, j1 = (j + 1) % n;
  return (1 - s) * (1 - r) * values_[grid_.index(i, j)] + s * (1 - r) * values_[grid_.index(i1, j)] +
         (1 - s) * r * values_[grid_.index(i, j1)] + s * r * values_[grid_.index(i1, j1)];
}

void require_same_grid(const ScalarField& a, const ScalarField& b) {
  if (!(a.grid() == b.grid())) throw GridMismatch("fields live on different grids");
}

ScalarField operator+(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a, b);
  std::vector<double> v(a.size());
  for (std::size_t l = 0; l < v.size(); ++l) v[l] = a[l] + b[l];
  return ScalarField(a.grid(), std::move(v));
}

ScalarField operator-(const ScalarField& a, const ScalarField& b) {
  require_same_grid(a, b);
  std::vector<double> v(a.size());
  for (std::size_t l = 0; l < v.size(); ++l) v[l] = a[l] - b[l];
  return ScalarField(a.grid(), std::move(v));
}

ScalarField operator*(double s, const ScalarField& a) {
  return a.map([s](double v) { return s * v; });
}

const Builtin& lookup_builtin(const std::string& name) {
  for (const auto& b : builtins())
    if (b.name == name) return b;
  throw std::invalid_argument("unknown builtin field '" + name + "'");
}

std::vector<std::string> builtin_names() {
  std::vector<std::string> out;
  for (const auto& b : builtins()) out.push_back(b.name);
  return out;
}

Source Source::from_text(const std::string& text, int dim) {
  const std::string prefix = "builtin:";
  if (text.rfind(prefix, 0) == 0) {
    const Builtin& b = lookup_builtin(text.substr(prefix.size()));
    if (b.dim != dim) throw std::invalid_argument("builtin '" + b.name + "' has the wrong dimension");
    return Source(b);
  }
  return Source(Expression::parse(text, dim));
}

double Source::value(std::span<const double> x) const {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, std::monostate>)
          throw std::logic_error("empty source");
        else if constexpr (std::is_same_v<T, Expression>)
          return s.evaluate(x);
        else if constexpr (std::is_same_v<T, Builtin>)
          return s.fn(x[0]);
        else
          return s.interpolate(x);
      },
      v_);
}

std::string Source::describe() const {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, std::monostate>)
          return "<empty>";
        else if constexpr (std::is_same_v<T, Expression>)
          return s.source().empty() ? s.to_string() : s.source();
        else if constexpr (std::is_same_v<T, Builtin>)
          return "builtin:" + s.name;
        else
          return "<field>";
      },
      v_);
}

ScalarField sample_field(const Source& s, const Grid& grid) {
  if (s.is_field()) {
    require_same_grid(s.field(), ScalarField(grid, 0.0));
    return s.field();
  }
  if (s.is_expression() && s.expression().dim() != grid.dim())
    throw std::invalid_argument("expression dimension does not match the domain");
  std::vector<double> v(grid.size());
  for (std::size_t l = 0; l < v.size(); ++l) {
    const auto p = grid.node(l);
    try {
      v[l] = s.value(std::span<const double>(p.data(), grid.dim()));
    } catch (const DomainError& e) {
      throw DomainError(std::string(e.what()) + " at node " + std::to_string(l));
    }
  }
  return ScalarField(grid, std::move(v));
}

ScalarField sample_field(const std::string& text, const Grid& grid) {
  return sample_field(Source::from_text(text, grid.dim()), grid);
}

double integrate(const ScalarField& g) {
  const Grid& grid = g.grid();
  double s = 0.0;
  for (std::size_t l = 0; l < g.size(); ++l) s += grid.weight(l) * g[l];
  return s;
}

double weighted_inner_product(const ScalarField& g, const ScalarField& h, const ScalarField& w) {
  require_same_grid(g, h);
  require_same_grid(g, w);
  const Grid& grid = g.grid();
  double s = 0.0;
  for (std::size_t l = 0; l < g.size(); ++l) s += (g[l] * h[l]) * w[l] * grid.weight(l);
  return s;
}

double tail_mass_ratio(const ScalarField& V) {
  const Grid& grid = V.grid();
  if (grid.domain().periodic()) return 0.0;
  const double vmin = *std::min_element(V.values().begin(), V.values().end());
  double z = 0.0;
  for (std::size_t l = 0; l < V.size(); ++l) z += grid.weight(l) * std::exp(-(V[l] - vmin));
  const double tail = (std::exp(-(V.values().front() - vmin)) + std::exp(-(V.values().back() - vmin))) * grid.spacing();
  return tail / z;
}

Domain suggest_real_box(const Expression& V, double max_half_width) {
  double vmin = V.evaluate(0.0);
  for (double L = 0.5; L <= max_half_width; L += 0.5) {
    const int m = 64;
    for (int k = 0; k <= m; ++k) {
      const double x = -L + 2.0 * L * k / m;
      vmin = std::min(vmin, V.evaluate(x));
    }
    const double edge = std::min(V.evaluate(-L), V.evaluate(L));
    if (edge - vmin > std::log(1e12)) return Domain::real1d(-L, L);
  }
  throw std::invalid_argument("potential is not confining enough to pick a truncation box");
}

void write_csv(const ScalarField& f, const std::string& path, const std::string& value_name) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  const Grid& g = f.grid();
  char buf[96];
  if (g.dim() == 1) {
    out << "x," << value_name << "\n";
    for (std::size_t l = 0; l < f.size(); ++l) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", g.coord(int(l)), f[l]);
      out << buf;
    }
  } else {
    out << "x1,x2," << value_name << "\n";
    for (std::size_t l = 0; l < f.size(); ++l) {
      const auto p = g.node(l);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p[0], p[1], f[l]);
      out << buf;
    }
  }
}

ScalarField read_csv(const std::string& path, const Grid& grid) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> values;
  values.reserve(grid.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto pos = line.rfind(',');
    values.push_back(std::stod(line.substr(pos == std::string::npos ? 0 : pos + 1)));
  }
  if (values.size() != grid.size())
    throw GridMismatch(path + " has " + std::to_string(values.size()) + " rows, grid needs " + std::to_string(grid.size()));
  return ScalarField(grid, std::move(values));
}

}  // namespace langbias
