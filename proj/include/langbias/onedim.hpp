#pragma once

#include <string>
#include <vector>

#include "langbias/estimate.hpp"
#include "langbias/grid.hpp"

namespace langbias {

struct CumulativeF {
  ScalarField F;  // anchored at the node nearest 0
  double I = 0.0;
};

CumulativeF cumulative_F(const ScalarField& f, const ScalarField& V);

// Weighted mean of F under e^{V+U} on tori; the left limit of F on real1d.
double constant_A(const ScalarField& F, const ScalarField& V, const ScalarField& U);

struct MedianResult {
  double value = 0.0;
  bool ambiguous = false;  // the sign sum sits at zero across a gap wider than twice the mean F increment
};

// sup{A : sum_l w_l sgn(F_l - A) >= 0} on tori; the left limit of F on real1d.
MedianResult median_A_star(const ScalarField& F);

struct PoissonSolution1D {
  ScalarField phi;   // mean zero under mu_U
  ScalarField dphi;
  double A = 0.0;
  double I = 0.0;
};

PoissonSolution1D solve_poisson_explicit(const ScalarField& f, const ScalarField& V, const ScalarField& U);

VarianceEstimate asymptotic_variance_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U);

double sigma_star_1d(const ScalarField& f, const ScalarField& V);

// |F - A*|, unnormalized.
ScalarField optimal_density_1d(const ScalarField& f, const ScalarField& V);

constexpr double kDensityFloor = 1e-300;
// -V - log(max(density, floor)), for display only.
ScalarField potential_from_density(const ScalarField& density, const ScalarField& V);

struct ClassDensity {
  ScalarField density;
  double bound = 0.0;
};

ClassDensity optimal_density_class_1d(const std::vector<ScalarField>& fs, const std::vector<double>& lambdas,
                                      const ScalarField& V);

// Mollified absolute value (rho_eps * |.|)(z), rho the standard bump.
double mollified_abs(double z, double eps);
// (rho * 1_[-ell, ell])(x) with ell = eps^{-1/2} - 1.
double cutoff_chi(double x, double eps);

ScalarField regularize_density(const ScalarField& density, const ScalarField& V, double eps,
                               std::vector<std::string>* warnings = nullptr);

// Half the second derivative of sigma^2 at U in directions dU, dW.
double second_variation_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U, const ScalarField& dU,
                           const ScalarField& dW);

struct TorusLimit {
  std::vector<double> L;
  std::vector<double> mean;    // truncated weighted mean of F under e^{V+U}
  std::vector<double> median;  // truncated sup-median of F
  double A_R = 0.0;
};

// U = 0 unless given. spacing is the grid step of the reference box [-max L, max L].
TorusLimit torus_limit_check(const Expression& f, const Expression& V, const std::vector<double>& L_values,
                             double spacing = 1e-3);

struct OneDimAnalysis {
  ScalarField F;
  double I = 0.0, Z = 0.0, Z_U = 0.0, A = 0.0, A_star = 0.0, sigma2 = 0.0, sigma_star = 0.0;
  bool median_ambiguous = false;
};

OneDimAnalysis analyze_1d(const ScalarField& f, const ScalarField& V, const ScalarField& U);

}  // namespace langbias
