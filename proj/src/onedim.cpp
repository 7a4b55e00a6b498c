#include "langbias/onedim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace langbias {

namespace {

void require_1d(const ScalarField& a) {
  if (a.grid().dim() != 1) throw std::invalid_argument("one-dimensional field expected");
}

std::size_t anchor_index(const Grid& g) {
  std::size_t best = 0;
  for (std::size_t l = 1; l < g.size(); ++l)
    if (std::fabs(g.coord(int(l))) < std::fabs(g.coord(int(best)))) best = l;
  return best;
}

// inc[l] integrates g over [x_{l-1}, x_l]: trapezoid plus the Euler-Maclaurin end correction
// -h^2/12 (g'_l - g'_{l-1}), with g' by central differences (one-sided at real1d ends).
// Fourth order; on tori the corrections telescope over a period.
std::vector<double> increments(const Grid& grid, const std::vector<double>& g) {
  const std::size_t n = g.size();
  const double h = grid.spacing();
  const bool periodic = grid.domain().periodic();
  std::vector<double> d(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (periodic) {
      d[l] = (g[(l + 1) % n] - g[(l + n - 1) % n]) / (2 * h);
    } else if (l == 0) {
      d[l] = (-3 * g[0] + 4 * g[1] - g[2]) / (2 * h);
    } else if (l + 1 == n) {
      d[l] = (3 * g[n - 1] - 4 * g[n - 2] + g[n - 3]) / (2 * h);
    } else {
      d[l] = (g[l + 1] - g[l - 1]) / (2 * h);
    }
  }
  std::vector<double> inc(n);
  for (std::size_t l = 0; l < n; ++l) {
    const std::size_t p = (l + n - 1) % n;
    inc[l] = 0.5 * h * (g[p] + g[l]) - h * h / 12.0 * (d[l] - d[p]);
  }
  if (!periodic) inc[0] = 0.0;
  return inc;
}

// Cumulative integral of g, zero at the anchor node.
std::vector<double> cumulative(const Grid& grid, const std::vector<double>& g) {
  const std::size_t n = g.size(), k = anchor_index(grid);
  const auto inc = increments(grid, g);
  std::vector<double> F(n, 0.0);
  for (std::size_t l = k + 1; l < n; ++l) F[l] = F[l - 1] + inc[l];
  for (std::size_t l = k; l-- > 0;) F[l] = F[l + 1] - inc[l + 1];
  return F;
}

// log(sum_l w_l c_l e^{a_l}) for c_l >= 0; -inf when the sum vanishes.
double log_weighted_sum(const Grid& grid, const std::vector<double>& a, const std::vector<double>* c) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < a.size(); ++l)
    if (!c || (*c)[l] != 0.0) m = std::max(m, a[l]);
  if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    const double cl = c ? (*c)[l] : 1.0;
    if (cl != 0.0) s += grid.weight(l) * cl * std::exp(a[l] - m);
  }
  return m + std::log(s);
}

std::vector<double> sum_of(const ScalarField& a, const ScalarField& b, double sb = 1.0) {
  require_same_grid(a, b);
  std::vector<double> s(a.size());
  for (std::size_t l = 0; l < s.size(); ++l) s[l] = a[l] + sb * b[l];
  return s;
}

double mu_mean(const ScalarField& h, const std::vector<double>& V_plus_U) {
  const Grid& g = h.grid();
  const double m = *std::min_element(V_plus_U.begin(), V_plus_U.end());
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < h.size(); ++l) {
    const double w = g.weight(l) * std::exp(-(V_plus_U[l] - m));
    num += w * h[l];
    den += w;
  }
  return num / den;
}

struct BumpTable {
  std::vector<double> y, q, cdf;
};

const BumpTable& bump() {
  static const BumpTable t = [] {
    const int m = 2001;
    BumpTable b;
    b.y.resize(m);
    b.q.resize(m);
    b.cdf.resize(m);
    double total = 0.0;
    for (int k = 0; k < m; ++k) {
      const double y = -1.0 + 2.0 * k / (m - 1);
      b.y[k] = y;
      b.q[k] = std::fabs(y) < 1.0 ? std::exp(-1.0 / (1.0 - y * y)) : 0.0;
      total += b.q[k];
    }
    for (auto& v : b.q) v /= total;
    // symmetrize so that the first moment vanishes exactly
    for (int k = 0; k < m / 2; ++k) {
      const double s = 0.5 * (b.q[k] + b.q[m - 1 - k]);
      b.q[k] = b.q[m - 1 - k] = s;
    }
    double c = 0.0;
    for (int k = 0; k < m; ++k) {
      c += b.q[k];
      b.cdf[k] = c;
    }
    for (auto& v : b.cdf) v /= c;
    return b;
  }();
  return t;
}

double bump_cdf(double t) {
  const BumpTable& b = bump();
  if (t <= -1.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double pos = (t + 1.0) / 2.0 * (b.y.size() - 1);
  const std::size_t k = std::min<std::size_t>(std::size_t(pos), b.y.size() - 2);
  const double s = pos - k;
  return (1 - s) * b.cdf[k] + s * b.cdf[k + 1];
}

// F - F(a) on real1d. Left of the peak of |F - F(a)| the sum runs from a, right of it from b, so the
// tails carry no cancellation; both sums agree up to the total, which vanishes to truncation accuracy.
std::vector<double> real_deviation(const ScalarField& f, const ScalarField& V, double I) {
  const Grid& grid = f.grid();
  const std::size_t n = f.size();
  std::vector<double> g(n), L(n, 0.0), R(n, 0.0);
  for (std::size_t l = 0; l < n; ++l) g[l] = (f[l] - I) * std::exp(-V[l]);
  const auto inc = increments(grid, g);
  for (std::size_t l = 1; l < n; ++l) L[l] = L[l - 1] + inc[l];
  for (std::size_t l = n - 1; l-- > 0;) R[l] = R[l + 1] - inc[l + 1];
  std::size_t peak = 0;
  for (std::size_t l = 1; l < n; ++l)
    if (std::fabs(L[l]) > std::fabs(L[peak])) peak = l;
  for (std::size_t l = peak + 1; l < n; ++l) L[l] = R[l];
  return L;
}

// F - A with A the mean constant (star = false) or the median constant (star = true).
std::vector<double> deviation(const ScalarField& f, const ScalarField& V, const ScalarField* U, bool star);

}  // namespace

CumulativeF cumulative_F(const ScalarField& f, const ScalarField& V) {
  require_1d(f);
  require_same_grid(f, V);
  const Grid& grid = f.grid();
  const double vmin = *std::min_element(V.values().begin(), V.values().end());
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < f.size(); ++l) {
    const double w = grid.weight(l) * std::exp(-(V[l] - vmin));
    num += w * f[l];
    den += w;
  }
  const double I = num / den;
  std::vector<double> g(f.size());
  for (std::size_t l = 0; l < g.size(); ++l) g[l] = (f[l] - I) * std::exp(-V[l]);
  return {ScalarField(grid, cumulative(grid, g)), I};
}

double constant_A(const ScalarField& F, const ScalarField& V, const ScalarField& U) {
  require_1d(F);
  if (!F.grid().domain().periodic()) return F.values().front();
  const auto s = sum_of(V, U);
  const double m = *std::max_element(s.begin(), s.end());
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < F.size(); ++l) {
    const double w = std::exp(s[l] - m);
    num += w * F[l];
    den += w;
  }
  return num / den;
}

MedianResult median_A_star(const ScalarField& F) {
  require_1d(F);
  const Grid& grid = F.grid();
  if (!grid.domain().periodic()) return {F.values().front(), false};
  const std::size_t n = F.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return F[a] < F[b]; });
  double total = 0.0;
  for (std::size_t l = 0; l < n; ++l) total += grid.weight(l);
  double variation = 0.0;
  for (std::size_t l = 0; l < n; ++l) variation += std::fabs(F[(l + 1) % n] - F[l]);
  const double typical_step = variation / double(n);
  const double tol = 1e-12 * total;

  double below = 0.0;
  std::size_t k = 0;
  while (k < n) {
    const double v = F[idx[k]];
    double group = 0.0;
    std::size_t e = k;
    while (e < n && F[idx[e]] == v) group += grid.weight(idx[e++]);
    const double above = total - below - group;
    const double s_at = above - below;
    const double s_gap = above - below - group;
    if (s_at < -tol) return {v, false};
    if (s_gap < -tol) return {v, false};
    if (e < n && std::fabs(s_gap) <= tol) {
      // sign sum is zero on (v, next); the sup is the next value
      const double next = F[idx[e]];
      return {next, next - v > 2.0 * typical_step};
    }
    below += group;
    k = e;
  }
  return {F[idx[n - 1]], false};
}

namespace {
std::vector<double> deviation(const ScalarField& f, const ScalarField& V, const ScalarField* U, bool star) {
  auto [F, I] = cumulative_F(f, V);
  if (!f.grid().domain().periodic()) return real_deviation(f, V, I);
  const double A = star ? median_A_star(F).value : constant_A(F, V, *U);
  std::vector<double> d(F.size());
  for (std::size_t l = 0; l < d.size(); ++l) d[l] = F[l] - A;
  return d;
}
}  // namespace

PoissonSolution1D solve_poisson_explicit(const ScalarField& f, const ScalarField& V, const ScalarField& U) {
  require_same_grid(f, U);
  auto [F, I] = cumulative_F(f, V);
  const double A = constant_A(F, V, U);
  const auto dev = deviation(f, V, &U, false);
  const Grid& grid = f.grid();
  std::vector<double> d(f.size());
  for (std::size_t l = 0; l < d.size(); ++l) {
    d[l] = -dev[l] * std::exp(V[l] + U[l]);
    if (!std::isfinite(d[l])) throw NumericalError("phi' overflows at node " + std::to_string(l));
  }
  auto phi = cumulative(grid, d);
  const auto s = sum_of(V, U);
  const double mean = mu_mean(ScalarField(grid, phi), s);
  for (auto& v : phi) v -= mean;
  return {ScalarField(grid, std::move(phi)), ScalarField(grid, std::move(d)), A, I};
}

VarianceEstimate asymptotic_variance_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U) {
  require_1d(f);
  require_same_grid(f, V);
  require_same_grid(f, U);
  const Grid& grid = f.grid();
  const double I = cumulative_F(f, V).I;
  const auto dev = deviation(f, V, &U, false);
  const auto s = sum_of(V, U);
  std::vector<double> neg_s(s.size()), sq(s.size()), negV(s.size());
  for (std::size_t l = 0; l < s.size(); ++l) {
    neg_s[l] = -s[l];
    negV[l] = -V[l];
    sq[l] = dev[l] * dev[l];
  }
  const double logZ = log_weighted_sum(grid, negV, nullptr);
  const double logZU = log_weighted_sum(grid, neg_s, nullptr);
  const double logS = log_weighted_sum(grid, s, &sq);

  VarianceEstimate est;
  est.backend = "closed_form_1d";
  est.I = I;
  est.Z = std::exp(logZ);
  est.Z_U = std::exp(logZU);
  if (std::isinf(logS) && logS < 0) {
    est.sigma2 = 0.0;
    est.dirichlet = 0.0;
  } else {
    est.sigma2 = std::exp(std::log(2.0) + logZU + logS - 2.0 * logZ);
    est.dirichlet = std::exp(logS - logZU);
  }
  if (!grid.domain().periodic()) {
    est.tail_ratio = tail_mass_ratio(V);
    if (est.tail_ratio > kTailWarnThreshold) est.warnings.push_back("truncation tail mass ratio exceeds 1e-8");
    if (est.sigma2 > 0.0) {
      const double edge = std::max(std::log(sq.front()) + s.front(), std::log(sq.back()) + s.back()) +
                          std::log(grid.spacing()) - logS;
      if (edge > std::log(1e-8)) est.warnings.push_back("(F - A) e^{V+U} does not decay at the box edges");
    }
  }
  return est;
}

double sigma_star_1d(const ScalarField& f, const ScalarField& V) {
  const auto dev = deviation(f, V, nullptr, true);
  const Grid& grid = f.grid();
  double m1 = 0.0;
  for (std::size_t l = 0; l < dev.size(); ++l) m1 += grid.weight(l) * std::fabs(dev[l]);
  std::vector<double> negV(V.size());
  for (std::size_t l = 0; l < V.size(); ++l) negV[l] = -V[l];
  const double logZ = log_weighted_sum(grid, negV, nullptr);
  if (m1 == 0.0) return 0.0;
  return std::exp(std::log(2.0) + 2.0 * std::log(m1) - 2.0 * logZ);
}

ScalarField optimal_density_1d(const ScalarField& f, const ScalarField& V) {
  auto dev = deviation(f, V, nullptr, true);
  for (auto& v : dev) v = std::fabs(v);
  return ScalarField(f.grid(), std::move(dev));
}

ScalarField potential_from_density(const ScalarField& density, const ScalarField& V) {
  require_same_grid(density, V);
  std::vector<double> u(density.size());
  for (std::size_t l = 0; l < u.size(); ++l) u[l] = -V[l] - std::log(std::max(density[l], kDensityFloor));
  return ScalarField(density.grid(), std::move(u));
}

ClassDensity optimal_density_class_1d(const std::vector<ScalarField>& fs, const std::vector<double>& lambdas,
                                      const ScalarField& V) {
  if (fs.empty() || fs.size() != lambdas.size()) throw std::invalid_argument("observables and weights must match");
  if (V.grid().domain().periodic())
    throw std::invalid_argument("no closed-form class optimum on the torus; use the steepest-descent optimizer");
  const Grid& grid = V.grid();
  std::vector<double> acc(V.size(), 0.0);
  for (std::size_t j = 0; j < fs.size(); ++j) {
    if (!(lambdas[j] > 0.0)) throw std::invalid_argument("class weights must be positive");
    const auto dev = deviation(fs[j], V, nullptr, true);
    for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += lambdas[j] * dev[l] * dev[l];
  }
  for (auto& v : acc) v = std::sqrt(v);
  ScalarField density(grid, std::move(acc));
  const double m1 = integrate(density);
  std::vector<double> negV(V.size());
  for (std::size_t l = 0; l < V.size(); ++l) negV[l] = -V[l];
  const double logZ = log_weighted_sum(grid, negV, nullptr);
  const double bound = m1 == 0.0 ? 0.0 : std::exp(std::log(2.0) + 2.0 * std::log(m1) - 2.0 * logZ);
  return {std::move(density), bound};
}

double mollified_abs(double z, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("mollifier width must be positive");
  if (std::fabs(z) >= eps) return std::fabs(z);
  const BumpTable& b = bump();
  double s = 0.0;
  for (std::size_t k = 0; k < b.y.size(); ++k) s += b.q[k] * std::fabs(z - eps * b.y[k]);
  return s;
}

double cutoff_chi(double x, double eps) {
  const double ell = 1.0 / std::sqrt(eps) - 1.0;
  if (!(ell > 0.0)) throw std::invalid_argument("cutoff needs eps < 1");
  return bump_cdf(x + ell) - bump_cdf(x - ell);
}

ScalarField regularize_density(const ScalarField& density, const ScalarField& V, double eps,
                               std::vector<std::string>* warnings) {
  require_1d(density);
  require_same_grid(density, V);
  if (!(eps > 0.0)) throw std::invalid_argument("regularization eps must be positive");
  const Grid& grid = density.grid();
  if (warnings && eps < grid.spacing()) warnings->push_back("mollifier under-resolved: eps below the grid spacing");
  std::vector<double> u(density.size());
  const bool torus = grid.domain().periodic();
  for (std::size_t l = 0; l < u.size(); ++l) {
    if (density[l] < 0.0) throw std::invalid_argument("density must be nonnegative");
    const double inner = V[l] + std::log(mollified_abs(density[l], eps));
    u[l] = torus ? -inner : -cutoff_chi(grid.coord(int(l)), eps) * inner;
  }
  return ScalarField(grid, std::move(u));
}

double second_variation_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U, const ScalarField& dU,
                           const ScalarField& dW) {
  require_same_grid(f, dU);
  require_same_grid(f, dW);
  const Grid& grid = f.grid();
  const auto sol = solve_poisson_explicit(f, V, U);
  const auto est = asymptotic_variance_1d(f, V, U);
  const auto s = sum_of(V, U);
  const double mU = mu_mean(dU, s), mW = mu_mean(dW, s);
  const double D = est.dirichlet;
  const double scale = est.Z_U / (est.Z * est.Z);
  double t1 = 0.0, cu = 0.0, cw = 0.0, eplus = 0.0;
  for (std::size_t l = 0; l < f.size(); ++l) {
    const double w = grid.weight(l);
    const double du0 = dU[l] - mU, dw0 = dW[l] - mW;
    const double g2 = sol.dphi[l] * sol.dphi[l];
    t1 += w * du0 * dw0 * (g2 + D) * std::exp(-s[l]);
    cu += w * du0 * sol.dphi[l];
    cw += w * dw0 * sol.dphi[l];
    eplus += w * std::exp(s[l]);
  }
  double value = scale * t1;
  if (grid.domain().periodic()) {
    cu = -cu / eplus;
    cw = -cw / eplus;
    value -= 2.0 * scale * cu * cw * eplus;
  }
  return value;
}

TorusLimit torus_limit_check(const Expression& f, const Expression& V, const std::vector<double>& L_values,
                             double spacing) {
  if (L_values.empty()) throw std::invalid_argument("no truncation lengths given");
  const double Lmax = *std::max_element(L_values.begin(), L_values.end());
  const int n = int(std::ceil(2.0 * Lmax / spacing)) + 1;
  // nodes a + i delta with delta = (b - a)/n, so b is one step past the last node
  const Grid grid(Domain::real1d(-Lmax, Lmax + 2.0 * Lmax / (n - 1)), n);
  const auto fs = sample_field(Source(f), grid);
  const auto Vs = sample_field(Source(V), grid);
  const auto F = cumulative_F(fs, Vs).F;
  TorusLimit out;
  out.A_R = F.values().front();
  for (double L : L_values) {
    std::vector<std::size_t> nodes;
    for (std::size_t l = 0; l < grid.size(); ++l)
      if (std::fabs(grid.coord(int(l))) <= L + 1e-12) nodes.push_back(l);
    double m = -std::numeric_limits<double>::infinity();
    for (auto l : nodes) m = std::max(m, Vs[l]);
    double num = 0.0, den = 0.0;
    for (auto l : nodes) {
      const double w = std::exp(Vs[l] - m);
      num += w * (F[l] - out.A_R);
      den += w;
    }
    std::vector<double> vals;
    for (auto l : nodes) vals.push_back(F[l]);
    const Grid sub(Domain::torus1d(), int(vals.size()));
    out.L.push_back(L);
    out.mean.push_back(out.A_R + num / den);
    out.median.push_back(median_A_star(ScalarField(sub, vals)).value);
  }
  return out;
}

OneDimAnalysis analyze_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U) {
  OneDimAnalysis a;
  auto cf = cumulative_F(f, V);
  a.F = cf.F;
  a.I = cf.I;
  a.A = constant_A(cf.F, V, U);
  const auto med = median_A_star(cf.F);
  a.A_star = med.value;
  a.median_ambiguous = med.ambiguous;
  const auto est = asymptotic_variance_1d(f, V, U);
  a.Z = est.Z;
  a.Z_U = est.Z_U;
  a.sigma2 = est.sigma2;
  a.sigma_star = sigma_star_1d(f, V);
  return a;
}

}  // namespace langbias
