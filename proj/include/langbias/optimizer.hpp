#pragma once

#include <string>
#include <utility>
#include <vector>

#include "langbias/metric.hpp"
#include "langbias/variance.hpp"

namespace langbias {

enum class StepRule { fixed_armijo, barzilai_borwein_seeded };
StepRule parse_step_rule(const std::string& name);
std::string step_rule_name(StepRule r);

struct OptimizerConfig {
  Metric metric = Metric::lebesgue;
  double armijo_c = 1e-4;
  double backtrack = 0.5;
  double step0 = 1.0;
  double grad_tol = 1e-8;
  int max_iters = 500;
  StepRule step_rule = StepRule::fixed_armijo;
  double max_step = 1e8;  // cap on BB-seeded trial steps

  void validate() const;
};

struct IterationRecord {
  int iter = 0;
  double sigma2 = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;    // accepted step that produced this iterate (0 at iteration 0)
  int backtracks = 0;
  double cv = 0.0;      // coefficient of variation of sum_j lambda_j |grad phi_j|^2
};

enum class StopReason { grad_tol, max_iters, step_collapse, objective_failure };
std::string stop_reason_name(StopReason r);

struct OptimizerTrace {
  std::vector<IterationRecord> records;
  ScalarField U;
  ScalarField density;  // e^{-(V+U) + min(V+U)}
  StopReason reason = StopReason::max_iters;
  std::string failure;
};

// Coefficient of variation over nodes whose density e^{-V-U} exceeds 1e-6 of its max.
double critical_point_cv(const ScalarField& grad_sq, const ScalarField& V, const ScalarField& U);

OptimizerTrace steepest_descent(const Problem& p, const OptimizerConfig& cfg);

struct ThetaResult {
  double theta = 0.0;
  double value = 0.0;
  bool at_endpoint = false;
  int evaluations = 0;
};

// Minimizes theta -> sigma^2[-theta V] (class variance when several observables).
ThetaResult minimize_theta(const Problem& p, std::pair<double, double> range, double tol = 1e-4);

void write_trace_csv(const OptimizerTrace& t, const std::string& path);

}  // namespace langbias
