#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "langbias/onedim.hpp"
#include "langbias/sampler.hpp"

using namespace langbias;
using std::numbers::pi;

namespace {

Source src(const std::string& t, int d = 1) { return Source::from_text(t, d); }

}  // namespace

TEST_CASE("Philox4x32-10 known answers") {
  using B = Philox::Block;
  CHECK(Philox::bijection({0, 0, 0, 0}, {0, 0}) == B{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(Philox::bijection({~0u, ~0u, ~0u, ~0u}, {~0u, ~0u}) == B{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(Philox::bijection({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        B{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("generator streams and moments") {
  Philox a(7, 0), b(7, 0), c(7, 1), d(8, 0);
  int same_c = 0, same_d = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u32();
    CHECK(x == b.next_u32());
    same_c += x == c.next_u32();
    same_d += x == d.next_u32();
  }
  CHECK(same_c < 3);
  CHECK(same_d < 3);

  Philox r(123, 4);
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0, umin = 1, umax = 0, usum = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    usum += u;
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  CHECK(umin > 0.0);
  CHECK(umax < 1.0);
  CHECK(std::abs(usum / n - 0.5) < 4 * std::sqrt(1.0 / 12 / n));
  CHECK(std::abs(s1 / n) < 4 / std::sqrt(double(n)));
  CHECK(std::abs(s2 / n - 1) < 4 * std::sqrt(2.0 / n));
  CHECK(std::abs(s4 / n - 3) < 4 * std::sqrt(96.0 / n));
}

TEST_CASE("config validation") {
  SamplerConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.steps() == 100000);
  auto d = c;
  d.dt = 0;
  CHECK_THROWS(d.validate());
  d = c;
  d.burn_in = c.T;
  CHECK_THROWS(d.validate());
  d = c;
  d.replicas = 1;
  CHECK_THROWS(d.validate());
  d = c;
  d.subsample_tau = c.dt / 2;
  CHECK_THROWS(d.validate());
}

TEST_CASE("trajectories are deterministic in (seed, replica)") {
  auto g = build_grid(Domain::torus1d(), 256);
  Drift drift(src("cos(x)"), src("0.3*sin(x)"), g);
  SamplerConfig c;
  c.T = 5;
  c.dt = 1e-2;
  c.seed = 42;
  auto a = simulate_trajectory(drift, c, 3), b = simulate_trajectory(drift, c, 3), e = simulate_trajectory(drift, c, 4);
  CHECK(a.x == b.x);
  CHECK(a.x != e.x);
  CHECK(a.states() == 501);
  for (double x : a.x) CHECK((x >= -pi && x < pi));
}

TEST_CASE("symbolic and gridded drifts agree") {
  auto g = build_grid(Domain::torus1d(), 4096);
  Drift sym(src("cos(x)"), src("0.5*sin(2*x)"), g);
  Drift grid(Source(sample_field("cos(x)", g)), Source(sample_field("0.5*sin(2*x)", g)), g);
  for (double x : {-3.0, -1.2, 0.0, 0.7, 2.9}) {
    double a = 0, b = 0;
    sym.total_gradient(std::span<const double>(&x, 1), std::span<double>(&a, 1));
    grid.total_gradient(std::span<const double>(&x, 1), std::span<double>(&b, 1));
    CHECK(a == doctest::Approx(-std::sin(x) + std::cos(2 * x)).epsilon(1e-12));
    CHECK(std::abs(a - b) < 1e-5);
  }
}

TEST_CASE("zero noise follows the gradient flow") {
  auto g = build_grid(Domain::torus1d(), 256);
  Drift drift(src("cos(x)"), src("0"), g);
  SamplerConfig c;
  c.zero_noise = true;
  c.T = 30;
  c.dt = 1e-2;
  for (std::uint64_t r = 0; r < 5; ++r) {
    auto t = simulate_trajectory(drift, c, r);
    // minimum of cos at the identified point +-pi
    CHECK(pi - std::abs(t.x.back()) < 1e-6);
    // V decreases monotonically along the flow
    for (std::size_t k = 1; k < t.states(); ++k) CHECK(std::cos(t.x[k]) <= std::cos(t.x[k - 1]) + 1e-14);
  }
}

TEST_CASE("Gaussian stationary law") {
  auto g = build_grid(Domain::real1d(-10, 10), 2048);
  Drift drift(src("x^2/2"), src("0"), g);
  SamplerConfig c;
  c.dt = 1e-2;
  c.T = 500;
  double s1 = 0, s2 = 0;
  long cnt = 0;
  for (std::uint64_t r = 0; r < 16; ++r) {
    auto t = simulate_trajectory(drift, c, r);
    for (double x : t.x) {
      s1 += x;
      s2 += x * x;
      ++cnt;
    }
  }
  // Euler-Maruyama on the OU process has stationary variance 1/(1 - dt/2)
  const double var = s2 / cnt - (s1 / cnt) * (s1 / cnt);
  CHECK(std::abs(s1 / cnt) < 0.05);
  CHECK(std::abs(var - 1.0 / (1 - c.dt / 2)) < 0.06);
}

TEST_CASE("self-normalized estimator") {
  auto g = build_grid(Domain::torus1d(), 256);
  SamplerConfig c;
  c.T = 20;
  c.dt = 1e-2;
  c.burn_in = 2;
  Drift zero_u(src("cos(x)"), src("0"), g);
  auto t = simulate_trajectory(zero_u, c, 0);
  // U = 0: plain time average over [burn_in, T)
  double avg = 0;
  for (long k = 200; k < 2000; ++k) avg += std::sin(t.x[k]) + t.x[k] * t.x[k];
  avg /= 1800;
  CHECK(estimate_self_normalized(t, src("sin(x)+x^2"), zero_u, c).value == doctest::Approx(avg).epsilon(1e-12));

  // constant f is recovered exactly for any U
  Drift with_u(src("cos(x)"), src("2*sin(x)"), g);
  auto t2 = simulate_trajectory(with_u, c, 1);
  CHECK(estimate_self_normalized(t2, src("3.25"), with_u, c).value == doctest::Approx(3.25).epsilon(1e-14));

  // subsampling keeps every k-th state
  auto cs = c;
  cs.subsample_tau = 0.1;
  double num = 0, den = 0;
  for (long k = 200; k < 2000; k += 10) {
    const double w = std::exp(2 * std::sin(t2.x[k]));
    num += std::cos(t2.x[k]) * w;
    den += w;
  }
  CHECK(estimate_self_normalized(t2, src("cos(x)"), with_u, cs).value == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("aggregate is invariant under replica permutation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.3, 0.1);
  std::vector<double> v(33);
  for (double& x : v) x = nd(rng);
  auto a = aggregate(v, 0.25, 100.0);
  std::shuffle(v.begin(), v.end(), rng);
  auto b = aggregate(v, 0.25, 100.0);
  CHECK(a.estimate == doctest::Approx(b.estimate).epsilon(1e-14));
  CHECK(a.empirical_sigma2 == doctest::Approx(b.empirical_sigma2).epsilon(1e-13));
  double sq = 0;
  for (double x : v) sq += (x - 0.25) * (x - 0.25);
  CHECK(a.empirical_sigma2 == doctest::Approx(100.0 * sq / 33).epsilon(1e-13));
  CHECK(a.standard_error == doctest::Approx(a.empirical_sigma2 * std::sqrt(2.0 / 33)).epsilon(1e-14));

  v[4] = std::numeric_limits<double>::quiet_NaN();
  auto c = aggregate(v, 0.25, 100.0);
  CHECK(c.flagged == 1);
  CHECK(std::isfinite(c.estimate));
  CHECK_THROWS(aggregate({1.0, NAN}, 0.0, 1.0));
}

TEST_CASE("Langevin empirical variance for U = 0") {
  auto g = build_grid(Domain::torus1d(), 512);
  auto p = Problem::single(sample_field("0", g), sample_field("0", g), sample_field("cos(x)", g));
  SamplerConfig c;
  c.dt = 5e-3;
  c.T = 400;
  c.replicas = 64;
  c.seed = 11;
  auto r = empirical_asym_variance(p, src("0"), src("0"), src("cos(x)"), c);
  CHECK(r.predicted == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(r.result.empirical_sigma2 - r.predicted) < 4 * r.result.standard_error);
  CHECK(std::abs(r.result.estimate) < 4 * r.result.estimate_se + 1e-3);
  CHECK(r.result.flagged == 0);

  auto k = empirical_asym_variance(Problem::single(p.V, p.U, sample_field("2", g)), src("0"), src("0"), src("2"), c);
  CHECK(k.result.empirical_sigma2 < 1e-20);
}

TEST_CASE("i.i.d. sampling") {
  auto g = build_grid(Domain::torus1d(), 2048);
  auto V = sample_field("0", g);
  auto f = sample_field(src("builtin:example_A1_f"), g);
  auto Ueps = f.map([](double v) { return -std::log(std::abs(v) + 0.1); });
  const double predicted = iid_variance(Problem::single(V, Ueps, f)).sigma2;
  CHECK(std::abs(predicted - 1.2 / 4.4) < 1e-3);
  auto r = iid_estimate(src("builtin:example_A1_f"), V, Ueps, 10000, 3, 200);
  CHECK(std::abs(r.empirical_sigma2 - predicted) < 3 * r.standard_error);

  auto c = iid_estimate(src("cos(x)"), V, sample_field("0", g), 5000, 9, 200);
  CHECK(std::abs(c.empirical_sigma2 - 0.5) < 3 * c.standard_error);
  CHECK(c.I_ref == doctest::Approx(0.0).epsilon(1e-12));

  // second run with the same seed is bitwise identical
  auto c2 = iid_estimate(src("cos(x)"), V, sample_field("0", g), 5000, 9, 200);
  CHECK(c.per_replica == c2.per_replica);

  auto g2 = build_grid(Domain::torus2d(), 8);
  CHECK_THROWS_AS(iid_estimate(src("sin(x1)", 2), sample_field("0", g2), sample_field("0", g2), 10, 0, 2),
                  std::invalid_argument);
}
