#pragma once

#include <string>
#include <vector>

#include "langbias/estimate.hpp"
#include "langbias/fd2d.hpp"
#include "langbias/grid.hpp"
#include "langbias/metric.hpp"

namespace langbias {

struct Observable {
  ScalarField f;
  double lambda = 1.0;
  std::string label;
};

struct Problem {
  ScalarField V;
  ScalarField U;
  std::vector<Observable> observables;
  SolverOptions solver;  // 2D backend

  static Problem single(ScalarField V, ScalarField U, ScalarField f);
  const Grid& grid() const { return V.grid(); }
  const Domain& domain() const { return V.grid().domain(); }
  Problem with_U(ScalarField U) const;
  void validate() const;
};

VarianceEstimate asym_variance(const Problem& p);
ScalarField functional_gradient(const Problem& p, Metric metric);

struct ClassEstimate {
  VarianceEstimate total;                 // lambda-weighted sum; dirichlet summed the same way
  std::vector<double> contributions;      // lambda_j sigma^2_j
};

ClassEstimate class_variance(const Problem& p);
ScalarField class_gradient(const Problem& p, Metric metric);

// Objective, gradient and sum_j lambda_j |grad phi_j|^2 from one set of Poisson solves.
struct ObjectiveEval {
  ClassEstimate value;
  ScalarField gradient;
  ScalarField grad_sq;
};
ObjectiveEval evaluate_objective(const Problem& p, Metric metric, bool with_gradient = true);

enum class ClassKind { inverse_helmholtz, weighted_K };
ClassKind parse_class_kind(const std::string& name);

struct ClassParams {
  double alpha = 1.0;
  double tau = 1.0;
  int J = 2;        // 1D: number of eigenpairs
  int max_mode = 4; // 2D: modes m, n <= max_mode
};

std::vector<Observable> build_observable_class(ClassKind kind, const ClassParams& params, const ScalarField& V);

VarianceEstimate iid_variance(const Problem& p);

struct IidOptimum {
  ScalarField density;        // |f - I| e^{-V}
  double s_star = 0.0;
  double support_Z = 0.0;     // integral of e^{-V} over {f != I}
  double s2_at_optimum = 0.0; // (Z / support_Z)^2 s_star
};
IidOptimum iid_optimal(const ScalarField& f, const ScalarField& V);

constexpr int kSubsampledMax1D = 1024;
constexpr int kSubsampledMax2D = 40;
VarianceEstimate subsampled_variance(const Problem& p, double tau);

}  // namespace langbias
