#include "langbias/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace langbias {

StepRule parse_step_rule(const std::string& name) {
  if (name == "fixed_armijo") return StepRule::fixed_armijo;
  if (name == "barzilai_borwein_seeded") return StepRule::barzilai_borwein_seeded;
  throw std::invalid_argument("unknown step rule '" + name + "'");
}

std::string step_rule_name(StepRule r) {
  return r == StepRule::fixed_armijo ? "fixed_armijo" : "barzilai_borwein_seeded";
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::max_iters: return "max_iters";
    case StopReason::step_collapse: return "step_collapse";
    case StopReason::objective_failure: return "objective_failure";
  }
  return "?";
}

void OptimizerConfig::validate() const {
  if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw std::invalid_argument("armijo_c must lie in (0, 1)");
  if (!(backtrack > 0.0 && backtrack < 1.0)) throw std::invalid_argument("backtrack must lie in (0, 1)");
  if (!(grad_tol > 0.0)) throw std::invalid_argument("grad_tol must be positive");
  if (!(step0 > 0.0)) throw std::invalid_argument("step0 must be positive");
  if (max_iters < 0) throw std::invalid_argument("max_iters must be nonnegative");
}

double critical_point_cv(const ScalarField& grad_sq, const ScalarField& V, const ScalarField& U) {
  std::vector<double> s(V.size());
  for (std::size_t l = 0; l < s.size(); ++l) s[l] = V[l] + U[l];
  const double smin = *std::min_element(s.begin(), s.end());
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (std::size_t l = 0; l < s.size(); ++l) {
    if (std::exp(-(s[l] - smin)) <= 1e-6) continue;
    sum += grad_sq[l];
    sum2 += grad_sq[l] * grad_sq[l];
    ++count;
  }
  if (count == 0) return 0.0;
  const double mean = sum / count;
  if (mean == 0.0) return 0.0;
  const double var = std::max(0.0, sum2 / count - mean * mean);
  return std::sqrt(var) / mean;
}

namespace {

struct Point {
  ScalarField U;
  ObjectiveEval eval;
  double grad_norm2 = 0.0;
};

bool try_evaluate(const Problem& p, const ScalarField& U, Metric m, Point& out, std::string* why) {
  try {
    out.U = U;
    out.eval = evaluate_objective(p.with_U(U), m, true);
    if (!std::isfinite(out.eval.value.total.sigma2)) {
      if (why) *why = "non-finite objective";
      return false;
    }
    out.grad_norm2 = metric_inner_product(out.eval.gradient, out.eval.gradient, p.V, U, m);
    return true;
  } catch (const std::exception& e) {
    if (why) *why = e.what();
    return false;
  }
}

ScalarField display_density(const ScalarField& V, const ScalarField& U) {
  std::vector<double> s(V.size());
  for (std::size_t l = 0; l < s.size(); ++l) s[l] = V[l] + U[l];
  const double smin = *std::min_element(s.begin(), s.end());
  for (auto& v : s) v = std::exp(-(v - smin));
  return ScalarField(V.grid(), std::move(s));
}

}  // namespace

OptimizerTrace steepest_descent(const Problem& p, const OptimizerConfig& cfg) {
  cfg.validate();
  p.validate();
  OptimizerTrace trace;
  Point cur;
  std::string why;
  if (!try_evaluate(p, p.U, cfg.metric, cur, &why)) {
    trace.reason = StopReason::objective_failure;
    trace.failure = why;
    trace.U = p.U;
    trace.density = display_density(p.V, p.U);
    return trace;
  }
  auto record = [&](int iter, double step, int bt) {
    trace.records.push_back({iter, cur.eval.value.total.sigma2, std::sqrt(cur.grad_norm2), step, bt,
                             critical_point_cv(cur.eval.grad_sq, p.V, cur.U)});
  };
  record(0, 0.0, 0);

  Point prev;
  bool have_prev = false;
  trace.reason = StopReason::max_iters;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    if (std::sqrt(cur.grad_norm2) <= cfg.grad_tol) {
      trace.reason = StopReason::grad_tol;
      break;
    }
    double eta = cfg.step0;
    if (cfg.step_rule == StepRule::barzilai_borwein_seeded && have_prev) {
      const ScalarField s = cur.U - prev.U;
      const ScalarField y = cur.eval.gradient - prev.eval.gradient;
      const double ss = metric_inner_product(s, s, p.V, cur.U, cfg.metric);
      const double sy = metric_inner_product(s, y, p.V, cur.U, cfg.metric);
      if (sy > 0.0 && std::isfinite(ss / sy)) eta = std::clamp(ss / sy, 1e-6 * cfg.step0, cfg.max_step);
    }
    const double f0 = cur.eval.value.total.sigma2;
    int bt = 0;
    Point trial;
    bool accepted = false;
    for (;;) {
      std::vector<double> u(cur.U.size());
      for (std::size_t l = 0; l < u.size(); ++l) u[l] = cur.U[l] - eta * cur.eval.gradient[l];
      bool ok = false;
      try {
        ok = try_evaluate(p, ScalarField(p.grid(), std::move(u)), cfg.metric, trial, nullptr);
      } catch (const std::exception&) {
        ok = false;  // non-finite trial potential
      }
      if (ok && trial.eval.value.total.sigma2 <= f0 - cfg.armijo_c * eta * cur.grad_norm2) {
        accepted = true;
        break;
      }
      eta *= cfg.backtrack;
      ++bt;
      if (eta < 1e-12 * cfg.step0) break;
    }
    if (!accepted) {
      trace.reason = StopReason::step_collapse;
      break;
    }
    prev = std::move(cur);
    have_prev = true;
    cur = std::move(trial);
    record(k, eta, bt);
  }
  trace.U = cur.U;
  trace.density = display_density(p.V, cur.U);
  return trace;
}

ThetaResult minimize_theta(const Problem& p, std::pair<double, double> range, double tol) {
  const auto [lo, hi] = range;
  if (!(lo < hi)) throw std::invalid_argument("theta range must satisfy lo < hi");
  const auto& Vv = p.V.values();
  const auto [vmin, vmax] = std::minmax_element(Vv.begin(), Vv.end());
  if (*vmax - *vmin == 0.0) throw std::invalid_argument("theta family needs a non-constant potential V");
  ThetaResult res;
  auto value = [&](double theta) {
    ++res.evaluations;
    const double v = class_variance(p.with_U((-theta) * p.V)).total.sigma2;
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  const int m = 20;
  std::vector<double> th(m + 1), val(m + 1);
  for (int k = 0; k <= m; ++k) {
    th[k] = lo + (hi - lo) * k / m;
    val[k] = value(th[k]);
  }
  const int kb = int(std::min_element(val.begin(), val.end()) - val.begin());
  double a = th[std::max(kb - 1, 0)], b = th[std::min(kb + 1, m)];
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = value(c), fd = value(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = value(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = value(d);
    }
  }
  double best = 0.5 * (a + b), fbest = value(best);
  // keep the coarse-scan point if the bracket refinement did not beat it
  if (val[kb] < fbest) {
    best = th[kb];
    fbest = val[kb];
  }
  res.theta = best;
  res.value = fbest;
  res.at_endpoint = (best - lo) <= 2 * tol || (hi - best) <= 2 * tol;
  return res;
}

void write_trace_csv(const OptimizerTrace& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iter,sigma2,grad_norm,step,backtracks,cv\n";
  char buf[160];
  for (const auto& r : t.records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%.17g\n", r.iter, r.sigma2, r.grad_norm, r.step, r.backtracks,
                  r.cv);
    out << buf;
  }
}

}  // namespace langbias
