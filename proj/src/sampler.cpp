#include "langbias/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "langbias/parallel.hpp"

namespace langbias {

namespace {

constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = std::uint64_t(a) * b;
  hi = std::uint32_t(p >> 32);
  lo = std::uint32_t(p);
}

double wrap_torus(double x) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double y = x - two_pi * std::floor((x + std::numbers::pi) / two_pi);
  if (y >= std::numbers::pi) y -= two_pi;  // rounding at the seam
  return y;
}

// Inverts the CDF of the piecewise-linear density through node values p on cell c of width h.
double invert_linear_cell(double p0, double p1, double h, double mass_fraction) {
  const double target = mass_fraction * 0.5 * h * (p0 + p1);
  const double a = 0.5 * (p1 - p0) / h;
  if (std::abs(a) * h < 1e-12 * (p0 + p1)) return p0 > 0 ? std::min(h, target / p0) : 0.5 * h;
  // a t^2 + p0 t - target = 0, stable root
  const double disc = std::max(0.0, p0 * p0 + 4.0 * a * target);
  const double t = 2.0 * target / (p0 + std::sqrt(disc));
  return std::clamp(t, 0.0, h);
}

struct LinearSampler1D {
  const Grid* grid = nullptr;
  std::vector<double> p;    // node densities
  std::vector<double> cdf;  // cumulative cell masses
  bool periodic = true;

  explicit LinearSampler1D(const ScalarField& total) : grid(&total.grid()) {
    const auto& s = total.values();
    const double smin = *std::min_element(s.begin(), s.end());
    p.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) p[i] = std::exp(-(s[i] - smin));
    periodic = grid->domain().periodic();
    const std::size_t cells = periodic ? p.size() : p.size() - 1;
    cdf.resize(cells);
    double acc = 0.0;
    const double h = grid->spacing();
    for (std::size_t c = 0; c < cells; ++c) {
      acc += 0.5 * h * (p[c] + p[(c + 1) % p.size()]);
      cdf[c] = acc;
    }
  }

  double draw(Philox& rng) const {
    const double u = rng.uniform() * cdf.back();
    std::size_t c = std::size_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    c = std::min(c, cdf.size() - 1);
    const double lo = c == 0 ? 0.0 : cdf[c - 1];
    const double frac = std::clamp((u - lo) / (cdf[c] - lo), 0.0, 1.0);
    const double h = grid->spacing();
    const double x = grid->coord(int(c)) + invert_linear_cell(p[c], p[(c + 1) % p.size()], h, frac);
    return periodic ? wrap_torus(x) : x;
  }
};

}  // namespace

Philox::Block Philox::bijection(Block c, std::array<std::uint32_t, 2> k) {
  for (int r = 0; r < 10; ++r) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, c[0], hi0, lo0);
    mulhilo(kM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kW0;
    k[1] += kW1;
  }
  return c;
}

Philox::Philox(std::uint64_t seed, std::uint64_t stream)
    : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)}, stream_(stream) {}

std::uint32_t Philox::next_u32() {
  if (pos_ == 4) {
    buf_ = bijection({std::uint32_t(block_), std::uint32_t(block_ >> 32), std::uint32_t(stream_),
                      std::uint32_t(stream_ >> 32)},
                     key_);
    ++block_;
    pos_ = 0;
  }
  return buf_[pos_++];
}

double Philox::uniform() {
  const std::uint64_t hi = next_u32(), lo = next_u32();
  const std::uint64_t bits = ((hi << 32) | lo) >> 11;  // 53 bits
  return (double(bits) + 0.5) * 0x1.0p-53;
}

double Philox::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform()));
  const double th = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(th);
  has_spare_ = true;
  return r * std::cos(th);
}

void SamplerConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("sampler dt must be positive");
  if (!(burn_in >= 0.0)) throw std::invalid_argument("sampler burn_in must be nonnegative");
  if (!(T > burn_in)) throw std::invalid_argument("sampler T must exceed burn_in");
  if (replicas < 2) throw std::invalid_argument("sampler needs at least 2 replicas");
  if (subsample_tau && !(*subsample_tau >= dt)) throw std::invalid_argument("subsample tau must be at least dt");
  if (interp_n < 4) throw std::invalid_argument("sampler interp_n must be at least 4");
}

long SamplerConfig::steps() const { return std::lround(T / dt); }

Drift::Drift(const Source& V, const Source& U, const Grid& grid) : grid_(grid), U_(U) {
  const int d = grid.dim();
  const ScalarField Us = sample_field(U, grid);
  u_shift_ = *std::max_element(Us.values().begin(), Us.values().end());
  total_ = sample_field(V, grid) + Us;
  std::vector<std::vector<double>> fd(d, std::vector<double>(grid.size(), 0.0));
  bool any_fd = false;
  for (const Source* src : {&V, &U}) {
    if (src->is_expression() && src->expression().dim() == d) {
      if (src->expression().is_constant()) continue;
      for (int k = 0; k < d; ++k) symbolic_.push_back(src->expression().differentiate(k));
      continue;
    }
    any_fd = true;
    const ScalarField s = sample_field(*src, grid);
    const int n = grid.n();
    const double h = grid.spacing();
    const bool periodic = grid.domain().periodic();
    for (std::size_t l = 0; l < grid.size(); ++l) {
      const int i = int(l % n), j = int(l / n);
      for (int k = 0; k < d; ++k) {
        const int c = k == 0 ? i : j;
        int cm = c - 1, cp = c + 1;
        double span = 2.0 * h;
        if (periodic) {
          cm = (cm + n) % n;
          cp = cp % n;
        } else if (cm < 0) {
          cm = 0;
          span = h;
        } else if (cp >= n) {
          cp = n - 1;
          span = h;
        }
        const std::size_t lm = k == 0 ? grid.index(cm, j) : grid.index(i, cm);
        const std::size_t lp = k == 0 ? grid.index(cp, j) : grid.index(i, cp);
        fd[k][l] += (s[lp] - s[lm]) / span;
      }
    }
  }
  if (any_fd)
    for (int k = 0; k < d; ++k) fd_.emplace_back(grid, std::move(fd[k]));
}

void Drift::total_gradient(std::span<const double> x, std::span<double> out) const {
  const int d = int(out.size());
  for (int k = 0; k < d; ++k) out[k] = fd_.empty() ? 0.0 : fd_[k].interpolate(x);
  // symbolic_ holds d consecutive partials per formula-valued source
  for (std::size_t s = 0; s < symbolic_.size(); ++s) out[s % d] += symbolic_[s].evaluate(x);
}

double Drift::U(std::span<const double> x) const { return U_.value(x); }

std::vector<double> draw_stationary(const ScalarField& total, Philox& rng) {
  const Grid& g = total.grid();
  if (g.dim() == 1) return {LinearSampler1D(total).draw(rng)};
  // 2D: node by mass, then uniform within its cell
  const auto& s = total.values();
  const double smin = *std::min_element(s.begin(), s.end());
  std::vector<double> cdf(s.size());
  double acc = 0.0;
  for (std::size_t l = 0; l < s.size(); ++l) cdf[l] = acc += std::exp(-(s[l] - smin));
  const double u = rng.uniform() * acc;
  const std::size_t l = std::min<std::size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), s.size() - 1);
  const auto node = g.node(l);
  const double h = g.spacing();
  const double x1 = wrap_torus(node[0] + (rng.uniform() - 0.5) * h);
  const double x2 = wrap_torus(node[1] + (rng.uniform() - 0.5) * h);
  return {x1, x2};
}

Trajectory simulate_trajectory(const Drift& drift, const SamplerConfig& cfg, std::uint64_t replica) {
  cfg.validate();
  const int d = drift.grid().dim();
  const bool periodic = drift.grid().domain().periodic();
  Philox rng(cfg.seed, replica);
  Trajectory tr;
  tr.dim = d;
  tr.dt = cfg.dt;
  const long N = cfg.steps();
  tr.x.resize(std::size_t(N + 1) * d);
  std::vector<double> x = draw_stationary(drift.total_field(), rng);
  std::copy(x.begin(), x.end(), tr.x.begin());
  const double noise = cfg.zero_noise ? 0.0 : std::sqrt(2.0 * cfg.dt);
  std::array<double, 2> grad{};
  for (long k = 1; k <= N; ++k) {
    drift.total_gradient(x, std::span<double>(grad.data(), d));
    for (int c = 0; c < d; ++c) {
      const double xi = cfg.zero_noise ? 0.0 : rng.normal();
      x[c] = x[c] - grad[c] * cfg.dt + noise * xi;
      if (periodic) x[c] = wrap_torus(x[c]);
    }
    for (int c = 0; c < d; ++c) {
      if (!std::isfinite(x[c])) {
        tr.aborted = true;
        tr.diagnostic = "non-finite position at step " + std::to_string(k) + " (replica " + std::to_string(replica) + ")";
        tr.x.resize(std::size_t(k) * d);
        return tr;
      }
    }
    std::copy(x.begin(), x.end(), tr.x.begin() + std::ptrdiff_t(k) * d);
  }
  return tr;
}

ReplicaEstimate estimate_self_normalized(const Trajectory& traj, const Source& f, const Drift& drift,
                                         const SamplerConfig& cfg) {
  ReplicaEstimate out;
  if (traj.aborted) {
    out.flagged = true;
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  const long N = long(traj.states()) - 1;
  const long k0 = std::lround(cfg.burn_in / cfg.dt);
  const long stride = cfg.subsample_tau ? std::max(1L, long(std::floor(*cfg.subsample_tau / cfg.dt + 1e-9))) : 1L;
  // e^U is shifted by max U over the grid; the ratio is unchanged
  double num = 0.0, den = 0.0;
  const double ushift = drift.u_shift();
  for (long k = k0; k < N; k += stride) {
    const auto x = traj.state(std::size_t(k));
    const double w = std::exp(drift.U(x) - ushift);
    num += f.value(x) * w;
    den += w;
  }
  if (!(den > 0.0) || !std::isfinite(num)) {
    out.flagged = true;
    out.value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.value = num / den;
  return out;
}

EstimatorResult aggregate(const std::vector<double>& values, double I_ref, double scale) {
  EstimatorResult r;
  r.I_ref = I_ref;
  r.scale = scale;
  r.per_replica = values;
  double sum = 0.0, sq_ref = 0.0;
  int used = 0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      ++r.flagged;
      continue;
    }
    sum += v;
    sq_ref += (v - I_ref) * (v - I_ref);
    ++used;
  }
  if (used < 2) throw NumericalError("fewer than 2 usable replicas");
  r.estimate = sum / used;
  double sq_mean = 0.0;
  for (double v : values)
    if (std::isfinite(v)) sq_mean += (v - r.estimate) * (v - r.estimate);
  r.estimate_se = std::sqrt(sq_mean / (used - 1) / used);
  // known-mean variance: chi^2 with `used` degrees of freedom
  r.empirical_sigma2 = scale * sq_ref / used;
  r.standard_error = r.empirical_sigma2 * std::sqrt(2.0 / used);
  return r;
}

EstimatorResult iid_estimate(const Source& f, const ScalarField& V, const ScalarField& U, long N, std::uint64_t seed,
                             int replicas) {
  const Grid& g = V.grid();
  require_same_grid(V, U);
  if (g.dim() != 1) throw std::invalid_argument("i.i.d. sampling is available in 1D only");
  if (N < 1) throw std::invalid_argument("i.i.d. sample size must be positive");
  if (replicas < 2) throw std::invalid_argument("i.i.d. estimate needs at least 2 replicas");
  const ScalarField total = V + U;
  const LinearSampler1D sampler(total);
  // weight = e^{-V} / (sampling density) with both interpolated the same way, so the ratio targets mu(f)
  const double vmin = *std::min_element(V.values().begin(), V.values().end());
  const double smin = *std::min_element(total.values().begin(), total.values().end());
  const ScalarField eV = V.map([&](double v) { return std::exp(-(v - vmin)); });
  const ScalarField eS = total.map([&](double v) { return std::exp(-(v - smin)); });

  const ScalarField fs = sample_field(f, g);
  double num = 0.0, den = 0.0;
  for (std::size_t l = 0; l < g.size(); ++l) {
    num += g.weight(l) * fs[l] * eV[l];
    den += g.weight(l) * eV[l];
  }
  const double I = num / den;

  std::vector<double> est(replicas);
  parallel_for(std::size_t(replicas), [&](std::size_t r) {
    Philox rng(seed, r);
    double a = 0.0, b = 0.0;
    for (long k = 0; k < N; ++k) {
      const double x = sampler.draw(rng);
      const double q = eS.interpolate(std::span<const double>(&x, 1));
      const double w = q > 0.0 ? eV.interpolate(std::span<const double>(&x, 1)) / q : 0.0;
      a += f.value(std::span<const double>(&x, 1)) * w;
      b += w;
    }
    est[r] = b > 0.0 ? a / b : std::numeric_limits<double>::quiet_NaN();
  });
  return aggregate(est, I, double(N));
}

EmpiricalComparison empirical_asym_variance(const Problem& p, const Source& V_src, const Source& U_src,
                                            const Source& f_src, const SamplerConfig& cfg) {
  cfg.validate();
  p.validate();
  if (p.observables.size() != 1) throw std::invalid_argument("empirical variance needs a single observable");
  EmpiricalComparison out;
  double I = 0.0;
  if (cfg.subsample_tau) {
    const auto v = subsampled_variance(p, *cfg.subsample_tau);
    out.predicted = v.sigma2;  // per-sample variance; time scale is tau per state
    I = v.I;
  } else {
    const auto v = asym_variance(p);
    out.predicted = v.sigma2;
    I = v.I;
  }
  Grid sim_grid = p.grid().dim() == 2 ? p.grid() : build_grid(p.domain(), std::max(cfg.interp_n, p.grid().n()));
  if (U_src.is_field()) sim_grid = U_src.field().grid();
  else if (V_src.is_field()) sim_grid = V_src.field().grid();
  const Drift drift(V_src, U_src, sim_grid);
  std::vector<double> est(cfg.replicas);
  std::vector<std::string> diag(cfg.replicas);
  parallel_for(std::size_t(cfg.replicas), [&](std::size_t r) {
    const Trajectory tr = simulate_trajectory(drift, cfg, r);
    if (tr.aborted) diag[r] = tr.diagnostic;
    est[r] = estimate_self_normalized(tr, f_src, drift, cfg).value;
  });
  for (const auto& d : diag)
    if (!d.empty()) throw NumericalError(d);
  double scale = cfg.T - cfg.burn_in;
  if (cfg.subsample_tau) {
    const long stride = std::max(1L, long(std::floor(*cfg.subsample_tau / cfg.dt + 1e-9)));
    scale = std::ceil((cfg.steps() - std::lround(cfg.burn_in / cfg.dt)) / double(stride));
  }
  out.result = aggregate(est, I, scale);
  out.z_score = (out.result.empirical_sigma2 - out.predicted) / out.result.standard_error;
  return out;
}

}  // namespace langbias
