#include "langbias/fd2d.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace langbias {

namespace {

void require_torus2d(const ScalarField& a) {
  if (a.grid().domain().kind != DomainKind::torus2d) throw std::invalid_argument("torus2d field expected");
}

Eigen::VectorXd to_vec(const ScalarField& a) {
  return Eigen::Map<const Eigen::VectorXd>(a.values().data(), Eigen::Index(a.size()));
}

ScalarField to_field(const Grid& g, const Eigen::VectorXd& v) {
  return ScalarField(g, std::vector<double>(v.data(), v.data() + v.size()));
}

double log_sum(const Eigen::VectorXd& a) {
  const double m = a.maxCoeff();
  return m + std::log((a.array() - m).exp().sum());
}

// Weighted graph Laplacian sum_dir D_F^T diag(w) D_F with node 0 removed.
Eigen::SparseMatrix<double> pinned_laplacian(int n, double delta, const Eigen::VectorXd& w) {
  const Eigen::Index N = Eigen::Index(n) * n;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(std::size_t(N) * 5);
  std::vector<double> diag(std::size_t(N), 0.0);
  const double h2 = 1.0 / (delta * delta);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      const Eigen::Index nb[2] = {(i + 1) % n + Eigen::Index(j) * n, i + Eigen::Index((j + 1) % n) * n};
      const double a = w[l] * h2;
      for (Eigen::Index k : nb) {
        diag[l] += a;
        diag[k] += a;
        if (l > 0 && k > 0) {
          t.emplace_back(l - 1, k - 1, -a);
          t.emplace_back(k - 1, l - 1, -a);
        }
      }
    }
  }
  for (Eigen::Index l = 1; l < N; ++l) t.emplace_back(l - 1, l - 1, diag[l]);
  Eigen::SparseMatrix<double> A(N - 1, N - 1);
  A.setFromTriplets(t.begin(), t.end());
  return A;
}

// Full (unpinned) weighted Laplacian applied to a vector.
Eigen::VectorXd apply_laplacian(int n, double delta, const Eigen::VectorXd& w, const Eigen::VectorXd& x) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  const double h2 = 1.0 / (delta * delta);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      const Eigen::Index nb[2] = {(i + 1) % n + Eigen::Index(j) * n, i + Eigen::Index((j + 1) % n) * n};
      for (Eigen::Index k : nb) {
        const double flux = w[l] * h2 * (x[l] - x[k]);
        y[l] += flux;
        y[k] -= flux;
      }
    }
  }
  return y;
}

}  // namespace

SolverKind parse_solver(const std::string& name) {
  if (name == "direct") return SolverKind::direct;
  if (name == "bordered_lu") return SolverKind::bordered_lu;
  if (name == "iterative") return SolverKind::iterative;
  throw std::invalid_argument("unknown solver '" + name + "' (expected direct, bordered_lu or iterative)");
}

Eigen::SparseMatrix<double> forward_difference(int n, double delta, int axis) {
  const Eigen::Index N = Eigen::Index(n) * n;
  std::vector<Eigen::Triplet<double>> t;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      const Eigen::Index k = axis == 0 ? (i + 1) % n + Eigen::Index(j) * n : i + Eigen::Index((j + 1) % n) * n;
      t.emplace_back(l, k, 1.0 / delta);
      t.emplace_back(l, l, -1.0 / delta);
    }
  Eigen::SparseMatrix<double> D(N, N);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

Eigen::SparseMatrix<double> backward_difference(int n, double delta, int axis) {
  const Eigen::Index N = Eigen::Index(n) * n;
  std::vector<Eigen::Triplet<double>> t;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      const Eigen::Index k = axis == 0 ? (i + n - 1) % n + Eigen::Index(j) * n : i + Eigen::Index((j + n - 1) % n) * n;
      t.emplace_back(l, l, 1.0 / delta);
      t.emplace_back(l, k, -1.0 / delta);
    }
  Eigen::SparseMatrix<double> D(N, N);
  D.setFromTriplets(t.begin(), t.end());
  return D;
}

Eigen::SparseMatrix<double> DiscreteSystem::bordered() const {
  const Eigen::Index N = L.rows();
  const double d2 = grid.cell_volume();
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(std::size_t(L.nonZeros() + 2 * N));
  for (int k = 0; k < L.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(L, k); it; ++it) t.emplace_back(it.row(), it.col(), -it.value());
  for (Eigen::Index l = 0; l < N; ++l) {
    t.emplace_back(l, N, expU[l]);
    t.emplace_back(N, l, d2 * weight[l]);
  }
  Eigen::SparseMatrix<double> B(N + 1, N + 1);
  B.setFromTriplets(t.begin(), t.end());
  return B;
}

DiscreteSystem assemble_system(const ScalarField& V, const ScalarField& U, const ScalarField& f) {
  require_torus2d(V);
  require_same_grid(V, U);
  require_same_grid(V, f);
  const Grid& g = V.grid();
  const int n = g.n();
  const double d = g.spacing();
  DiscreteSystem s;
  s.grid = g;
  s.V = to_vec(V);
  s.U = to_vec(U);
  s.f = to_vec(f);
  const Eigen::VectorXd sum = s.V + s.U;
  const double m = sum.minCoeff();
  const Eigen::VectorXd ep = (sum.array() - m).exp();      // e^{V+U-m}
  const Eigen::VectorXd em = (-(sum.array() - m)).exp();   // e^{-(V+U)+m}
  s.weight = (-sum.array()).exp();
  s.expU = s.U.array().exp();
  s.rhs = s.expU.cwiseProduct(s.f);
  const Eigen::SparseMatrix<double> Dep = Eigen::SparseMatrix<double>(ep.asDiagonal());
  const Eigen::SparseMatrix<double> Dem = Eigen::SparseMatrix<double>(em.asDiagonal());
  s.L = Dep * backward_difference(n, d, 0) * Dem * forward_difference(n, d, 0) +
        Dep * backward_difference(n, d, 1) * Dem * forward_difference(n, d, 1);
  s.L.prune(0.0);
  return s;
}

struct PoissonOperator2D::Impl {
  Eigen::SparseMatrix<double> A;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::IncompleteCholesky<double>>
      cg;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  DiscreteSystem bordered_sys;
};

PoissonOperator2D::PoissonOperator2D(PoissonOperator2D&&) noexcept = default;
PoissonOperator2D::~PoissonOperator2D() = default;

PoissonOperator2D::PoissonOperator2D(const ScalarField& V, const ScalarField& U, SolverOptions opt)
    : impl_(std::make_unique<Impl>()), grid_(V.grid()), V_(V), U_(U), opt_(opt) {
  require_torus2d(V);
  require_same_grid(V, U);
  const Eigen::VectorXd v = to_vec(V), u = to_vec(U);
  const Eigen::VectorXd s = v + u;
  shift_ = s.minCoeff();
  w_ = (-(s.array() - shift_)).exp();
  expU_ = u.array().exp();
  if (!expU_.allFinite()) throw NumericalError("e^U overflows");
  const double logd2 = std::log(grid_.cell_volume());
  logZ_ = logd2 + log_sum(-v);
  logZU_ = logd2 + log_sum(-s);
  switch (opt_.kind) {
    case SolverKind::direct:
      impl_->A = pinned_laplacian(grid_.n(), grid_.spacing(), w_);
      impl_->ldlt.compute(impl_->A);
      if (impl_->ldlt.info() != Eigen::Success) throw NumericalError("sparse LDL^T factorization failed");
      break;
    case SolverKind::iterative:
      impl_->A = pinned_laplacian(grid_.n(), grid_.spacing(), w_);
      impl_->cg.setTolerance(opt_.tolerance * 1e-2);
      impl_->cg.setMaxIterations(20000);
      impl_->cg.compute(impl_->A);
      if (impl_->cg.info() != Eigen::Success) throw NumericalError("incomplete Cholesky preconditioner failed");
      break;
    case SolverKind::bordered_lu: {
      impl_->bordered_sys = assemble_system(V, U, ScalarField(grid_, 0.0));
      const auto B = impl_->bordered_sys.bordered();
      impl_->lu.compute(B);
      if (impl_->lu.info() != Eigen::Success) throw NumericalError("bordered system is singular");
      break;
    }
  }
}

Eigen::VectorXd PoissonOperator2D::solve_symmetric(const Eigen::VectorXd& b) const {
  const Eigen::Index N = b.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(N);
  if (opt_.kind == SolverKind::bordered_lu) {
    // W^{-1} b through the generator form, border entry must come back zero
    Eigen::VectorXd r(N + 1);
    r.head(N) = (b.array() / w_.array()).matrix();
    r[N] = 0.0;
    Eigen::VectorXd y = impl_->lu.solve(r);
    x = y.head(N);
  } else {
    Eigen::VectorXd xr;
    if (opt_.kind == SolverKind::direct) {
      xr = impl_->ldlt.solve(b.tail(N - 1));
    } else {
      xr = impl_->cg.solve(b.tail(N - 1));
      if (impl_->cg.info() != Eigen::Success)
        throw NumericalError("conjugate gradients did not converge, error " + std::to_string(impl_->cg.error()));
    }
    x.tail(N - 1) = xr;
  }
  x.array() -= x.dot(w_) / w_.sum();
  return x;
}

DiscretePoissonSolution PoissonOperator2D::solve(const ScalarField& f) const {
  require_same_grid(f, V_);
  const Eigen::VectorXd fv = to_vec(f);
  const Eigen::VectorXd v = to_vec(V_);
  const Eigen::VectorXd emv = (-(v.array() - v.minCoeff())).exp();
  const double I_N = fv.dot(emv) / emv.sum();
  const Eigen::VectorXd b = expU_.cwiseProduct(w_).cwiseProduct((fv.array() - I_N).matrix());
  const Eigen::VectorXd rhs = expU_.cwiseProduct(fv);
  const double scale = std::max(rhs.norm(), std::abs(I_N) * expU_.norm());

  // residual of the bordered system as written: -L phi + I_N e^U - e^U f, and the mean row
  auto residual = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& sym) {
    const Eigen::VectorXd Aphi = apply_laplacian(grid_.n(), grid_.spacing(), w_, phi);
    sym = b - Aphi;
    const Eigen::VectorXd r = (Aphi.array() / w_.array()).matrix() + I_N * expU_ - rhs;
    const double border = phi.dot(w_) / (phi.cwiseAbs().dot(w_) + 1e-300);
    return scale > 0 ? std::sqrt(r.squaredNorm() / (scale * scale) + border * border) : std::abs(border);
  };

  Eigen::VectorXd phi = solve_symmetric(b), sym;
  double res = residual(phi, sym);
  for (int it = 0; it < 4 && !(res <= opt_.tolerance); ++it) {
    sym.array() -= sym.mean();
    phi += solve_symmetric(sym);
    res = residual(phi, sym);
  }
  if (!(res <= opt_.tolerance))
    throw NumericalError("discrete Poisson solve stalled at relative residual " + std::to_string(res));
  return {to_field(grid_, phi), I_N, res};
}

void PoissonOperator2D::gradient(const Eigen::VectorXd& phi, Eigen::VectorXd& gx, Eigen::VectorXd& gy) const {
  const int n = grid_.n();
  const double d = grid_.spacing();
  gx.resize(phi.size());
  gy.resize(phi.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      gx[l] = (phi[(i + 1) % n + Eigen::Index(j) * n] - phi[l]) / d;
      gy[l] = (phi[i + Eigen::Index((j + 1) % n) * n] - phi[l]) / d;
    }
}

DiscretePoissonSolution solve_discrete_poisson(const DiscreteSystem& sys, const SolverOptions& opt) {
  const Grid& g = sys.grid;
  std::vector<double> V(sys.V.data(), sys.V.data() + sys.V.size()), U(sys.U.data(), sys.U.data() + sys.U.size());
  PoissonOperator2D op(ScalarField(g, V), ScalarField(g, U), opt);
  return op.solve(to_field(g, sys.f));
}

ScalarField grad_sq_field(const PoissonOperator2D& op, const ScalarField& phi) {
  Eigen::VectorXd gx, gy;
  op.gradient(to_vec(phi), gx, gy);
  return to_field(op.grid(), (gx.array().square() + gy.array().square()).matrix());
}

VarianceEstimate discrete_variance(const PoissonOperator2D& op, const DiscretePoissonSolution& sol) {
  const ScalarField g2 = grad_sq_field(op, sol.phi);
  const Eigen::VectorXd gv = to_vec(g2);
  VarianceEstimate est;
  est.backend = "fd2d";
  est.I = sol.I_N;
  est.Z = std::exp(op.log_Z());
  est.Z_U = std::exp(op.log_Z_U());
  const double s = gv.dot(op.shifted_weight());
  if (s == 0.0) return est;
  const double log_norm = std::log(op.grid().cell_volume() * s) - op.shift();
  est.sigma2 = std::exp(std::log(2.0) + op.log_Z_U() - 2.0 * op.log_Z() + log_norm);
  est.dirichlet = std::exp(log_norm - op.log_Z_U());
  return est;
}

VarianceEstimate discrete_variance(const ScalarField& V, const ScalarField& U, const ScalarField& f,
                                   const SolverOptions& opt) {
  PoissonOperator2D op(V, U, opt);
  return discrete_variance(op, op.solve(f));
}

ScalarField discrete_gradient(const ScalarField& V, const ScalarField& U, const ScalarField& f, Metric metric,
                              const SolverOptions& opt) {
  PoissonOperator2D op(V, U, opt);
  const auto sol = op.solve(f);
  const auto est = discrete_variance(op, sol);
  const ScalarField g2 = grad_sq_field(op, sol.phi);
  const ScalarField mw = metric_gradient_weight(V, U, metric);
  const double c = std::exp(std::log(2.0) + op.log_Z_U() - 2.0 * op.log_Z());
  std::vector<double> out(g2.size());
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = c * (g2[l] - est.dirichlet) * mw[l];
  return ScalarField(V.grid(), std::move(out));
}

double circulant_eigenvalue(int k, int n) {
  const double d = 2.0 * std::numbers::pi / n;
  const double s = std::sin(std::numbers::pi * k / n);
  return 4.0 / (d * d) * s * s;
}

PoincareDiag discrete_poincare_diag(int n, const ScalarField& V, const ScalarField& U) {
  require_torus2d(V);
  require_same_grid(V, U);
  if (V.grid().n() != n) throw GridMismatch("grid size does not match n");
  double dev = 0.0;
  for (std::size_t l = 0; l < V.size(); ++l) dev = std::max(dev, std::fabs(V[l] + U[l]));
  PoincareDiag out;
  if (dev <= 1e-12) {
    out.lambda1 = circulant_eigenvalue(1, n);
    out.R_est = out.lambda1;
    out.exact = true;
    return out;
  }
  PoissonOperator2D op(V, U);
  const Eigen::VectorXd& w = op.shifted_weight();
  const Grid& g = V.grid();
  Eigen::VectorXd x(Eigen::Index(g.size()));
  for (std::size_t l = 0; l < g.size(); ++l) {
    const auto p = g.node(l);
    x[Eigen::Index(l)] = std::cos(p[0]) + 0.5 * std::sin(p[1]) + 0.1 * std::cos(p[0] + 2 * p[1]);
  }
  x.array() -= x.dot(w) / w.sum();
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    x /= std::sqrt(x.cwiseProduct(w).dot(x));
    Eigen::VectorXd y = op.solve_symmetric(w.cwiseProduct(x));
    const Eigen::VectorXd Ay = apply_laplacian(n, g.spacing(), w, y);
    const double next = y.dot(Ay) / y.cwiseProduct(w).dot(y);
    x = y;
    if (it > 0 && std::fabs(next - lambda) <= 1e-13 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  out.lambda1 = lambda;
  out.R_est = lambda;
  return out;
}

ScalarField solve_perturbed_psi(const ScalarField& V, const ScalarField& U, const ScalarField& dU,
                                const DiscretePoissonSolution& phi) {
  require_same_grid(V, dU);
  PoissonOperator2D op(V, U);
  const int n = V.grid().n();
  const double d = V.grid().spacing();
  const Eigen::VectorXd p = to_vec(phi.phi), du = to_vec(dU);
  const Eigen::VectorXd& w = op.shifted_weight();
  Eigen::VectorXd gx, gy;
  op.gradient(p, gx, gy);
  // b = sum_dir D_F^T (w dU D_F phi)
  Eigen::VectorXd b = Eigen::VectorXd::Zero(p.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Eigen::Index l = i + Eigen::Index(j) * n;
      const Eigen::Index kx = (i + 1) % n + Eigen::Index(j) * n, ky = i + Eigen::Index((j + 1) % n) * n;
      const double qx = w[l] * du[l] * gx[l] / d, qy = w[l] * du[l] * gy[l] / d;
      b[l] -= qx + qy;
      b[kx] += qx;
      b[ky] += qy;
    }
  return to_field(V.grid(), op.solve_symmetric(b));
}

void write_triplets(const Eigen::SparseMatrix<double>& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (int k = 0; k < m.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

}  // namespace langbias
