#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "langbias/fd2d.hpp"

using namespace langbias;
using std::numbers::pi;

namespace {

Grid T2(int n) { return build_grid(Domain::torus2d(), n); }
ScalarField S(const std::string& e, const Grid& g) { return sample_field(e, g); }

// Smooth random trigonometric field with modes |k| <= 2.
ScalarField smooth_random(const Grid& g, std::mt19937& rng, double amp) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double c[8];
  for (double& v : c) v = amp * u(rng);
  std::vector<double> out(g.size());
  for (std::size_t l = 0; l < g.size(); ++l) {
    auto p = g.node(l);
    out[l] = c[0] * std::cos(p[0]) + c[1] * std::sin(p[1]) + c[2] * std::cos(p[0] + p[1]) + c[3] * std::sin(2 * p[0]) +
             c[4] * std::cos(2 * p[1] - p[0]) + c[5] * std::sin(p[0]) * std::cos(p[1]) + c[6] * std::cos(2 * p[0]) +
             c[7];
  }
  return ScalarField(g, std::move(out));
}

Eigen::VectorXd vec(const ScalarField& a) { return Eigen::Map<const Eigen::VectorXd>(a.values().data(), a.size()); }

double wnorm2(const Grid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& w) {
  return g.cell_volume() * a.cwiseProduct(w).dot(a);
}

// forward-difference gradient, written out independently of the library
void fgrad(const Grid& g, const Eigen::VectorXd& p, Eigen::VectorXd& gx, Eigen::VectorXd& gy) {
  const int n = g.n();
  gx.resize(p.size());
  gy.resize(p.size());
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const std::size_t l = g.index(i, j);
      gx[l] = (p[g.index((i + 1) % n, j)] - p[l]) / g.spacing();
      gy[l] = (p[g.index(i, (j + 1) % n)] - p[l]) / g.spacing();
    }
}

}  // namespace

TEST_CASE("difference operators and the unweighted generator") {
  const int n = 6;
  auto g = T2(n);
  const double d = g.spacing();
  auto sys = assemble_system(S("0", g), S("0", g), S("sin(x1)", g));
  Eigen::MatrixXd L = Eigen::MatrixXd(sys.L);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const auto l = g.index(i, j);
      CHECK(-L(l, l) == doctest::Approx(4 / (d * d)));
      CHECK(L(l, g.index((i + 1) % n, j)) == doctest::Approx(1 / (d * d)));
      CHECK(L(l, g.index((i + n - 1) % n, j)) == doctest::Approx(1 / (d * d)));
      CHECK(L(l, g.index(i, (j + 1) % n)) == doctest::Approx(1 / (d * d)));
      CHECK(L(l, g.index(i, (j + n - 1) % n)) == doctest::Approx(1 / (d * d)));
    }
  CHECK(sys.L.nonZeros() == 5 * n * n);

  // D_B^x D_F^x is the circulant second difference
  Eigen::MatrixXd DD = Eigen::MatrixXd(backward_difference(n, d, 0) * forward_difference(n, d, 0));
  for (int i = 0; i < n; ++i) CHECK(DD(g.index(i, 2), g.index(i, 2)) == doctest::Approx(-2 / (d * d)));

  // bordered layout
  Eigen::MatrixXd B = Eigen::MatrixXd(sys.bordered());
  const int N = n * n;
  CHECK(B.rows() == N + 1);
  CHECK(B(N, N) == 0.0);
  CHECK(B(3, N) == doctest::Approx(1.0));
  CHECK(B(N, 5) == doctest::Approx(d * d));
}

TEST_CASE("generator annihilates constants and is self-adjoint") {
  std::mt19937 rng(31);
  for (int t = 0; t < 4; ++t) {
    auto g = T2(12);
    auto sys = assemble_system(smooth_random(g, rng, 1.5), smooth_random(g, rng, 1.0), S("cos(x2)", g));
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(g.size());
    CHECK((sys.L * ones).cwiseAbs().maxCoeff() < 1e-9 * Eigen::MatrixXd(sys.L).cwiseAbs().maxCoeff());
  }
  auto g = T2(16);
  auto sys = assemble_system(S("2*cos(2*x1)-cos(x2)", g), S("0", g), S("sin(x1)", g));
  Eigen::MatrixXd L = Eigen::MatrixXd(sys.L);
  Eigen::MatrixXd W = sys.weight.asDiagonal();
  Eigen::MatrixXd WL = W * L;
  CHECK((WL - WL.transpose()).cwiseAbs().maxCoeff() < 1e-10 * WL.cwiseAbs().maxCoeff());
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd a = Eigen::VectorXd::Random(g.size()), b = Eigen::VectorXd::Random(g.size());
    const double lhs = a.dot(W * (L * b)), rhs = (L * a).dot(W * b);
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::abs(lhs) + 1e-12);
  }
}

TEST_CASE("bordered system is nonsingular and the solution satisfies it") {
  std::mt19937 rng(8);
  for (int n : {5, 8, 11}) {
    auto g = T2(n);
    auto sys = assemble_system(smooth_random(g, rng, 1.0), smooth_random(g, rng, 1.0), smooth_random(g, rng, 1.0));
    Eigen::MatrixXd B = Eigen::MatrixXd(sys.bordered());
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    CHECK(lu.rank() == B.rows());

    auto sol = solve_discrete_poisson(sys);
    Eigen::VectorXd x(B.rows());
    x.head(g.size()) = vec(sol.phi);
    x[g.size()] = sol.I_N;
    Eigen::VectorXd r = Eigen::VectorXd::Zero(B.rows());
    r.head(g.size()) = sys.rhs;
    CHECK((B * x - r).norm() < 1e-10 * r.norm());
    CHECK(sol.residual < 1e-10);
    // weighted mean zero (last row)
    CHECK(std::abs(g.cell_volume() * sys.weight.dot(x.head(g.size()))) < 1e-10 * vec(sol.phi).cwiseAbs().maxCoeff());
  }
}

TEST_CASE("exact eigenvector solve") {
  const int n = 32;
  auto g = T2(n);
  auto sol = solve_discrete_poisson(assemble_system(S("0", g), S("0", g), S("sin(x1)", g)));
  const double lambda1 = 4 / (g.spacing() * g.spacing()) * std::pow(std::sin(pi / n), 2);
  auto ref = S("sin(x1)", g);
  double err = 0.0;
  for (std::size_t l = 0; l < g.size(); ++l) err = std::max(err, std::abs(sol.phi[l] - ref[l] / lambda1));
  CHECK(err < 1e-12);
  CHECK(std::abs(sol.I_N) < 1e-15);

  auto c = solve_discrete_poisson(assemble_system(S("cos(x1)", g), S("sin(x2)", g), S("1.75", g)));
  CHECK(c.I_N == doctest::Approx(1.75).epsilon(1e-14));
  for (double v : c.phi.values()) CHECK(std::abs(v) < 1e-12);

  auto s = solve_discrete_poisson(assemble_system(S("0", g), S("0", g), S("sin(x1)+sin(x2)", g)));
  CHECK(std::abs(s.I_N) < 1e-15);
}

TEST_CASE("solver backends agree") {
  std::mt19937 rng(4);
  auto g = T2(20);
  auto V = smooth_random(g, rng, 1.5), U = smooth_random(g, rng, 0.8), f = smooth_random(g, rng, 1.0);
  auto base = discrete_variance(V, U, f);
  for (auto kind : {SolverKind::bordered_lu, SolverKind::iterative}) {
    SolverOptions o;
    o.kind = kind;
    auto e = discrete_variance(V, U, f, o);
    CHECK(e.sigma2 == doctest::Approx(base.sigma2).epsilon(1e-9));
  }
  CHECK(parse_solver("bordered_lu") == SolverKind::bordered_lu);
  CHECK_THROWS_AS(parse_solver("qr"), std::invalid_argument);
}

TEST_CASE("discrete variance") {
  std::vector<double> gaps;
  for (int n : {16, 32, 64}) {
    auto g = T2(n);
    auto e = discrete_variance(S("0", g), S("0", g), S("sin(x1)+sin(x2)", g));
    CHECK(e.backend == "fd2d");
    CHECK(e.sigma2 == doctest::Approx(2 * e.Z_U * e.Z_U / (e.Z * e.Z) * e.dirichlet).epsilon(1e-13));
    gaps.push_back(e.sigma2 - 2.0);
  }
  CHECK(std::abs(gaps[2]) < 2.0 * 0.01);
  CHECK(gaps[0] / gaps[1] == doctest::Approx(4.0).epsilon(0.05));
  CHECK(gaps[1] / gaps[2] == doctest::Approx(4.0).epsilon(0.05));

  auto g = T2(24);
  CHECK(discrete_variance(S("cos(x1)", g), S("0", g), S("3", g)).sigma2 < 1e-25);
}

TEST_CASE("Example 5.7 free-energy ratio at n = 150") {
  auto g = T2(150);
  auto V = S("2*cos(2*x1)-cos(x2)", g), f = S("sin(x1)", g);
  const double s0 = discrete_variance(V, S("0", g), f).sigma2;
  const double s1 = discrete_variance(V, V.map([](double v) { return -v; }), f).sigma2;
  CHECK(std::abs(s1 / s0 - 0.177) < 0.005);
}

TEST_CASE("shift invariance") {
  std::mt19937 rng(12);
  auto g = T2(24);
  auto V = smooth_random(g, rng, 1.0), U = smooth_random(g, rng, 1.0), f = smooth_random(g, rng, 1.0);
  const double a = discrete_variance(V, U, f).sigma2;
  for (double c : {-7.0, 0.3, 12.0})
    CHECK(discrete_variance(V, U.map([&](double v) { return v + c; }), f).sigma2 == doctest::Approx(a).epsilon(1e-10));
}

TEST_CASE("discrete gradient matches central differences") {
  std::mt19937 rng(77);
  auto g = T2(24);
  for (auto metric : {Metric::mu_U, Metric::mu, Metric::lebesgue}) {
    for (int t = 0; t < 3; ++t) {
      auto V = smooth_random(g, rng, 1.0), U = smooth_random(g, rng, 0.7), f = smooth_random(g, rng, 1.0);
      auto dU = smooth_random(g, rng, 1.0);
      const double eps = 1e-5;
      const double fd = (discrete_variance(V, U + eps * dU, f).sigma2 - discrete_variance(V, U - (eps * dU), f).sigma2) /
                        (2 * eps);
      auto G = discrete_gradient(V, U, f, metric);
      const double an = metric_inner_product(G, dU, V, U, metric);
      CHECK(std::abs(fd - an) < 1e-6 * std::abs(an));
    }
  }
  auto V = S("cos(x1)", g), U = S("sin(x2)", g);
  auto z = discrete_gradient(V, U, S("2", g), Metric::mu_U);
  for (double v : z.values()) CHECK(v == 0.0);
  auto G = discrete_gradient(V, U, S("sin(x1)*cos(x2)", g), Metric::mu_U);
  const double norm = std::sqrt(metric_inner_product(G, G, V, U, Metric::mu_U));
  CHECK(std::abs(metric_inner_product(G, ScalarField(g, 1.0), V, U, Metric::mu_U)) < 1e-12 * std::max(1.0, norm));
}

TEST_CASE("circulant spectrum and the discrete Poincare constant") {
  for (int n : {8, 16}) {
    auto g = T2(n);
    const double d = g.spacing();
    auto sys = assemble_system(S("0", g), S("0", g), S("0", g));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-Eigen::MatrixXd(sys.L));
    auto ev = es.eigenvalues();
    CHECK(std::abs(ev[0]) < 1e-10 / (d * d));
    // lambda_0 has the constant eigenvector
    Eigen::VectorXd v0 = es.eigenvectors().col(0);
    CHECK((v0.cwiseAbs().array() - std::abs(v0[0])).abs().maxCoeff() < 1e-10);
    for (int k : {0, 1, 2}) {
      const double lk = 4 / (d * d) * std::pow(std::sin(pi * k / n), 2);
      CHECK(circulant_eigenvalue(k, n) == doctest::Approx(lk).epsilon(1e-15));
      // a 1D mode k in x1 is an exact eigenvector of -L
      auto m = vec(S("cos(" + std::to_string(k) + "*x1)", g));
      CHECK((-(sys.L * m) - lk * m).norm() < 1e-12 * (1 + lk) * m.norm());
    }
    // second distinct eigenvalue of the 2D operator is lambda_1 (multiplicity 4)
    CHECK(ev[1] == doctest::Approx(circulant_eigenvalue(1, n)).epsilon(1e-12));
    CHECK(ev[4] == doctest::Approx(circulant_eigenvalue(1, n)).epsilon(1e-12));

    auto diag = discrete_poincare_diag(n, S("0", g), S("0", g));
    CHECK(diag.exact);
    CHECK(diag.lambda0 == 0.0);
    CHECK(diag.lambda1 == doctest::Approx(circulant_eigenvalue(1, n)).epsilon(1e-15));
    CHECK(diag.R_est == doctest::Approx(std::pow(n / pi, 2) * std::pow(std::sin(pi / n), 2)).epsilon(1e-14));
  }
  double prev = 0.0;
  for (int n : {8, 32, 128}) {
    auto g = T2(n);
    const double R = discrete_poincare_diag(n, S("0", g), S("0", g)).R_est;
    CHECK(R < 1.0);
    CHECK(R > prev);
    prev = R;
  }
  CHECK(1.0 - prev < 1e-3);
}

TEST_CASE("Poincare estimate for a non-flat potential") {
  const int n = 10;
  auto g = T2(n);
  auto V = S("cos(x1)+0.5*sin(x2)", g), U = S("0.3*cos(x1+x2)", g);
  auto diag = discrete_poincare_diag(n, V, U);
  CHECK(!diag.exact);
  // dense oracle: W^{1/2}(-L)W^{-1/2} is symmetric with the same spectrum
  auto sys = assemble_system(V, U, S("0", g));
  Eigen::VectorXd sw = sys.weight.cwiseSqrt();
  Eigen::MatrixXd M = sw.asDiagonal() * (-Eigen::MatrixXd(sys.L)) * sw.cwiseInverse().asDiagonal();
  M = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  CHECK(diag.lambda1 == doctest::Approx(es.eigenvalues()[1]).epsilon(1e-8));
  CHECK(diag.R_est > 0.0);
}

TEST_CASE("perturbed Poisson solution") {
  std::mt19937 rng(21);
  auto g = T2(24);
  auto V = smooth_random(g, rng, 1.0), U = smooth_random(g, rng, 0.6), f = smooth_random(g, rng, 1.0);
  PoissonOperator2D op(V, U);
  auto phi = op.solve(f);
  const Eigen::VectorXd w = vec(V + U).unaryExpr([](double s) { return std::exp(-s); });

  // constant direction: psi = c phi
  auto psi_c = solve_perturbed_psi(V, U, ScalarField(g, 2.5), phi);
  CHECK((vec(psi_c) - 2.5 * vec(phi.phi)).cwiseAbs().maxCoeff() < 1e-9 * vec(phi.phi).cwiseAbs().maxCoeff());
  auto psi0 = solve_perturbed_psi(V, U, ScalarField(g, 0.0), phi);
  CHECK(vec(psi0).cwiseAbs().maxCoeff() == 0.0);

  // Gateaux derivative of grad phi, error shrinking linearly in eps
  auto dU = smooth_random(g, rng, 1.0);
  auto psi = solve_perturbed_psi(V, U, dU, phi);
  Eigen::VectorXd px, py, gx, gy, hx, hy;
  fgrad(g, vec(psi), px, py);
  fgrad(g, vec(phi.phi), gx, gy);
  std::vector<double> errs;
  for (double eps : {1e-2, 1e-3}) {
    auto pe = PoissonOperator2D(V, U + eps * dU).solve(f);
    fgrad(g, vec(pe.phi), hx, hy);
    Eigen::VectorXd ex = (hx - gx) / eps - px, ey = (hy - gy) / eps - py;
    errs.push_back(std::sqrt(wnorm2(g, ex, w) + wnorm2(g, ey, w)));
  }
  const double scale = std::sqrt(wnorm2(g, px, w) + wnorm2(g, py, w));
  CHECK(errs[1] < 0.2 * errs[0]);
  CHECK(errs[1] < 1e-2 * scale);

  // discrete integration by parts: <grad psi_dW, grad psi_dU> = <dU grad phi, grad psi_dW>
  auto dW = smooth_random(g, rng, 1.0);
  auto psiW = solve_perturbed_psi(V, U, dW, phi);
  Eigen::VectorXd wx, wy;
  fgrad(g, vec(psiW), wx, wy);
  const Eigen::VectorXd du = vec(dU);
  const double lhs = (wx.cwiseProduct(px) + wy.cwiseProduct(py)).dot(w);
  const double rhs = (du.cwiseProduct(gx).cwiseProduct(wx) + du.cwiseProduct(gy).cwiseProduct(wy)).dot(w);
  CHECK(std::abs(lhs - rhs) < 1e-9 * std::abs(lhs));
}

TEST_CASE("second-order convergence of phi") {
  std::vector<double> errs;
  for (int n : {16, 32, 64}) {
    auto g = T2(n);
    auto sol = solve_discrete_poisson(assemble_system(S("0", g), S("0", g), S("sin(x1)*cos(x2)+cos(2*x1)", g)));
    // continuous solution of -Laplace phi = f
    auto exact = S("sin(x1)*cos(x2)/2+cos(2*x1)/4", g);
    double e = 0.0;
    for (std::size_t l = 0; l < g.size(); ++l) e = std::max(e, std::abs(sol.phi[l] - exact[l]));
    errs.push_back(e);
  }
  CHECK(errs[0] / errs[1] == doctest::Approx(4.0).epsilon(0.05));
  CHECK(errs[1] / errs[2] == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("triplet export") {
  auto g = T2(4);
  auto sys = assemble_system(S("0", g), S("0", g), S("0", g));
  auto path = (std::filesystem::temp_directory_path() / "langbias_triplets.txt").string();
  write_triplets(sys.bordered(), path);
  std::ifstream in(path);
  int r, c, count = 0, maxr = 0;
  double v;
  while (in >> r >> c >> v) {
    CHECK(r >= 1);
    CHECK(c >= 1);
    maxr = std::max(maxr, r);
    ++count;
  }
  CHECK(count == int(sys.bordered().nonZeros()));
  CHECK(maxr == 17);
  std::filesystem::remove(path);
}
