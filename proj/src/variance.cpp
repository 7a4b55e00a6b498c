#include "langbias/variance.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <unsupported/Eigen/MatrixFunctions>

#include "langbias/onedim.hpp"
#include "langbias/parallel.hpp"

namespace langbias {

namespace {

void require_single(const Problem& p) {
  if (p.observables.size() != 1) throw std::invalid_argument("operation needs exactly one observable");
}

double weighted_mean_I(const ScalarField& f, const ScalarField& V) {
  const Grid& g = f.grid();
  const double vmin = *std::min_element(V.values().begin(), V.values().end());
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < f.size(); ++l) {
    const double w = g.weight(l) * std::exp(-(V[l] - vmin));
    num += w * f[l];
    den += w;
  }
  return num / den;
}

void merge_warnings(VarianceEstimate& into, const VarianceEstimate& from) {
  for (const auto& w : from.warnings)
    if (std::find(into.warnings.begin(), into.warnings.end(), w) == into.warnings.end()) into.warnings.push_back(w);
}

}  // namespace

Problem Problem::single(ScalarField V, ScalarField U, ScalarField f) {
  Problem p;
  p.V = std::move(V);
  p.U = std::move(U);
  p.observables.push_back({std::move(f), 1.0, "f"});
  p.validate();
  return p;
}

Problem Problem::with_U(ScalarField newU) const {
  Problem p = *this;
  p.U = std::move(newU);
  require_same_grid(p.V, p.U);
  return p;
}

void Problem::validate() const {
  require_same_grid(V, U);
  if (observables.empty()) throw std::invalid_argument("problem needs at least one observable");
  for (const auto& o : observables) {
    require_same_grid(V, o.f);
    if (!(o.lambda >= 0.0) || !std::isfinite(o.lambda)) throw std::invalid_argument("observable weights must be >= 0");
  }
}

ObjectiveEval evaluate_objective(const Problem& p, Metric metric, bool with_gradient) {
  p.validate();
  const std::size_t J = p.observables.size();
  std::vector<VarianceEstimate> parts(J);
  std::vector<ScalarField> g2(J);
  if (p.grid().dim() == 1) {
    parallel_for(J, [&](std::size_t j) {
      const auto& f = p.observables[j].f;
      parts[j] = asymptotic_variance_1d(f, p.V, p.U);
      if (with_gradient) {
        const auto sol = solve_poisson_explicit(f, p.V, p.U);
        g2[j] = sol.dphi.map([](double d) { return d * d; });
      }
    });
  } else {
    const PoissonOperator2D op(p.V, p.U, p.solver);
    parallel_for(J, [&](std::size_t j) {
      const auto sol = op.solve(p.observables[j].f);
      parts[j] = discrete_variance(op, sol);
      if (with_gradient) g2[j] = grad_sq_field(op, sol.phi);
    });
  }

  ObjectiveEval out;
  VarianceEstimate& t = out.value.total;
  t.backend = parts[0].backend;
  t.Z = parts[0].Z;
  t.Z_U = parts[0].Z_U;
  t.I = parts[0].I;
  t.tail_ratio = parts[0].tail_ratio;
  for (std::size_t j = 0; j < J; ++j) {
    const double lam = p.observables[j].lambda;
    const double c = lam == 0.0 ? 0.0 : lam * parts[j].sigma2;
    out.value.contributions.push_back(c);
    t.sigma2 += c;
    t.dirichlet += lam * parts[j].dirichlet;
    merge_warnings(t, parts[j]);
  }
  if (!with_gradient) return out;

  std::vector<double> acc(p.grid().size(), 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const double lam = p.observables[j].lambda;
    for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += lam * g2[j][l];
  }
  out.grad_sq = ScalarField(p.grid(), acc);
  const double c = 2.0 * t.Z_U / (t.Z * t.Z);
  const ScalarField mw = metric_gradient_weight(p.V, p.U, metric);
  for (std::size_t l = 0; l < acc.size(); ++l) acc[l] = c * (acc[l] - t.dirichlet) * mw[l];
  out.gradient = ScalarField(p.grid(), std::move(acc));
  return out;
}

VarianceEstimate asym_variance(const Problem& p) {
  require_single(p);
  return evaluate_objective(p, Metric::lebesgue, false).value.total;
}

ScalarField functional_gradient(const Problem& p, Metric metric) {
  require_single(p);
  return evaluate_objective(p, metric, true).gradient;
}

ClassEstimate class_variance(const Problem& p) { return evaluate_objective(p, Metric::lebesgue, false).value; }

ScalarField class_gradient(const Problem& p, Metric metric) { return evaluate_objective(p, metric, true).gradient; }

ClassKind parse_class_kind(const std::string& name) {
  if (name == "inverse_helmholtz") return ClassKind::inverse_helmholtz;
  if (name == "weighted_K") return ClassKind::weighted_K;
  throw std::invalid_argument("unknown observable class '" + name + "' (expected inverse_helmholtz or weighted_K)");
}

std::vector<Observable> build_observable_class(ClassKind kind, const ClassParams& prm, const ScalarField& V) {
  const Grid& g = V.grid();
  if (!g.domain().periodic()) throw std::invalid_argument("observable classes are defined on tori");
  std::vector<Observable> out;
  auto weight = [&](double k2) { return std::pow(k2 + prm.tau * prm.tau, -prm.alpha); };
  auto finish = [&](std::vector<double> v, double lam, std::string label) {
    if (kind == ClassKind::weighted_K)
      for (std::size_t l = 0; l < v.size(); ++l) v[l] *= std::exp(V[l]);
    out.push_back({ScalarField(g, std::move(v)), lam, std::move(label)});
  };
  if (g.dim() == 1) {
    if (prm.J < 1) throw std::invalid_argument("J must be positive");
    const int kmax = (prm.J + 1) / 2;
    if (2 * kmax >= g.n()) throw std::invalid_argument("J exceeds the Nyquist order of the grid");
    for (int j = 1; j <= prm.J; ++j) {
      const int k = (j + 1) / 2;
      const bool odd = j % 2 == 1;
      std::vector<double> v(g.size());
      for (std::size_t l = 0; l < v.size(); ++l) v[l] = odd ? std::sin(k * g.coord(int(l))) : std::cos(k * g.coord(int(l)));
      finish(std::move(v), weight(double(k) * k), (odd ? "sin(" : "cos(") + std::to_string(k) + "x)");
    }
    return out;
  }
  const int M = prm.max_mode;
  if (M < 1) throw std::invalid_argument("max_mode must be positive");
  if (2 * M >= g.n()) throw std::invalid_argument("max_mode exceeds the Nyquist order of the grid");
  for (int m = 0; m <= M; ++m)
    for (int n = 0; n <= M; ++n) {
      if (m == 0 && n == 0) continue;
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          // a, b: 0 = cos, 1 = sin; sin(0) vanishes identically
          if ((a == 1 && m == 0) || (b == 1 && n == 0)) continue;
          std::vector<double> v(g.size());
          for (std::size_t l = 0; l < v.size(); ++l) {
            const auto x = g.node(l);
            const double u = a ? std::sin(m * x[0]) : std::cos(m * x[0]);
            const double w = b ? std::sin(n * x[1]) : std::cos(n * x[1]);
            v[l] = u * w;
          }
          std::string label = std::string(a ? "sin(" : "cos(") + std::to_string(m) + "x1)" + (b ? "sin(" : "cos(") +
                              std::to_string(n) + "x2)";
          finish(std::move(v), weight(double(m) * m + double(n) * n), std::move(label));
        }
    }
  return out;
}

VarianceEstimate iid_variance(const Problem& p) {
  require_single(p);
  p.validate();
  const ScalarField& f = p.observables[0].f;
  const Grid& g = p.grid();
  const double I = weighted_mean_I(f, p.V);
  double Z = 0.0, ZU = 0.0, S = 0.0;
  const double vmin = *std::min_element(p.V.values().begin(), p.V.values().end());
  for (std::size_t l = 0; l < f.size(); ++l) {
    const double w = g.weight(l);
    Z += w * std::exp(-(p.V[l] - vmin));
    ZU += w * std::exp(-p.V[l] - p.U[l] + vmin);
    S += w * (f[l] - I) * (f[l] - I) * std::exp(p.U[l] - p.V[l] + vmin);
  }
  VarianceEstimate est;
  est.backend = "iid";
  est.I = I;
  est.Z = Z * std::exp(-vmin);
  est.Z_U = ZU * std::exp(-vmin);
  est.sigma2 = ZU * S / (Z * Z);
  if (!std::isfinite(est.sigma2)) est.sigma2 = std::numeric_limits<double>::infinity();
  return est;
}

IidOptimum iid_optimal(const ScalarField& f, const ScalarField& V) {
  require_same_grid(f, V);
  const Grid& g = f.grid();
  const double I = weighted_mean_I(f, V);
  IidOptimum out;
  std::vector<double> d(f.size());
  double Z = 0.0, m1 = 0.0, zs = 0.0, dev = 0.0;
  for (std::size_t l = 0; l < f.size(); ++l) dev = std::max(dev, std::fabs(f[l] - I));
  for (std::size_t l = 0; l < f.size(); ++l) {
    const double e = std::exp(-V[l]);
    d[l] = std::fabs(f[l] - I) * e;
    Z += g.weight(l) * e;
    m1 += g.weight(l) * d[l];
    if (std::fabs(f[l] - I) > 1e-12 * dev) zs += g.weight(l) * e;
  }
  out.density = ScalarField(g, std::move(d));
  out.s_star = m1 * m1 / (Z * Z);
  out.support_Z = zs;
  out.s2_at_optimum = zs > 0.0 ? (Z / zs) * (Z / zs) * out.s_star : 0.0;
  return out;
}

VarianceEstimate subsampled_variance(const Problem& p, double tau) {
  require_single(p);
  p.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("subsampling interval tau must be positive");
  const Grid& g = p.grid();
  if (!g.domain().periodic()) throw std::invalid_argument("subsampled variance is defined on tori only");
  if (g.dim() == 1 && g.n() > kSubsampledMax1D) throw std::invalid_argument("1D grid too large for dense exponentiation");
  if (g.dim() == 2 && g.n() > kSubsampledMax2D) throw std::invalid_argument("2D grid too large for dense exponentiation");
  const ScalarField& f = p.observables[0].f;
  const Eigen::Index N = Eigen::Index(g.size());

  Eigen::MatrixXd L;
  if (g.dim() == 1) {
    const int n = g.n();
    const double d = g.spacing();
    std::vector<double> s(f.size());
    for (std::size_t l = 0; l < s.size(); ++l) s[l] = p.V[l] + p.U[l];
    const double m = *std::min_element(s.begin(), s.end());
    L = Eigen::MatrixXd::Zero(N, N);
    // (L h)_l = e^{s_l} [e^{-s_l}(h_{l+1} - h_l) - e^{-s_{l-1}}(h_l - h_{l-1})] / d^2
    for (int l = 0; l < n; ++l) {
      const int lp = (l + 1) % n, lm = (l + n - 1) % n;
      const double a = std::exp(-(s[l] - m)), b = std::exp(-(s[lm] - m)), c = std::exp(s[l] - m) / (d * d);
      L(l, lp) += c * a;
      L(l, l) -= c * (a + b);
      L(l, lm) += c * b;
    }
  } else {
    L = Eigen::MatrixXd(assemble_system(p.V, p.U, f).L);
  }
  const Eigen::MatrixXd P = (tau * L).exp();

  const double I = weighted_mean_I(f, p.V);
  Eigen::VectorXd w(N), gv(N);
  double Z = 0.0, ZU = 0.0;
  for (Eigen::Index l = 0; l < N; ++l) {
    const double q = g.weight(std::size_t(l));
    w[l] = q * std::exp(-p.V[l] - p.U[l]);
    Z += q * std::exp(-p.V[l]);
    ZU += w[l];
    gv[l] = std::exp(p.U[l]) * (f[l] - I);
  }
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N + 1, N + 1);
  B.topLeftCorner(N, N) = Eigen::MatrixXd::Identity(N, N) - P;
  B.block(0, N, N, 1).setOnes();
  B.block(N, 0, 1, N) = w.transpose() / w.sum();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N + 1);
  rhs.head(N) = gv;
  const Eigen::VectorXd sol = B.partialPivLu().solve(rhs);
  const Eigen::VectorXd phi = sol.head(N);
  const double res = (B * sol - rhs).norm() / std::max(rhs.norm(), 1e-300);
  if (!(res < 1e-8)) throw NumericalError("subsampled Poisson solve residual " + std::to_string(res));

  VarianceEstimate est;
  est.backend = "subsampled";
  est.I = I;
  est.Z = Z;
  est.Z_U = ZU;
  const double a = 2.0 * (phi.cwiseProduct(gv)).dot(w), b = gv.cwiseProduct(gv).dot(w);
  est.sigma2 = ZU / (Z * Z) * (a - b);
  return est;
}

}  // namespace langbias
