#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "langbias/estimate.hpp"
#include "langbias/grid.hpp"
#include "langbias/metric.hpp"

namespace langbias {

enum class SolverKind {
  direct,       // pinned symmetric form, sparse LDL^T
  bordered_lu,  // the bordered system as written, sparse LU
  iterative     // conjugate gradients with incomplete Cholesky
};

SolverKind parse_solver(const std::string& name);

struct SolverOptions {
  SolverKind kind = SolverKind::direct;
  double tolerance = 1e-10;
};

// Periodic forward/backward differences on the fast (x1) or slow (x2) index.
Eigen::SparseMatrix<double> forward_difference(int n, double delta, int axis);
Eigen::SparseMatrix<double> backward_difference(int n, double delta, int axis);

struct DiscreteSystem {
  Grid grid;
  Eigen::SparseMatrix<double> L;  // n^2 x n^2 generator
  Eigen::VectorXd rhs;            // e^U f
  Eigen::VectorXd expU;
  Eigen::VectorXd weight;         // e^{-V-U}
  Eigen::VectorXd f, V, U;

  // [[-L, e^U], [delta^2 e^{-V-U}^T, 0]]
  Eigen::SparseMatrix<double> bordered() const;
};

DiscreteSystem assemble_system(const ScalarField& V, const ScalarField& U, const ScalarField& f);

struct DiscretePoissonSolution {
  ScalarField phi;
  double I_N = 0.0;
  double residual = 0.0;
};

DiscretePoissonSolution solve_discrete_poisson(const DiscreteSystem& sys, const SolverOptions& opt = {});

// Factorized operator for fixed (V, U); solves for many observables.
class PoissonOperator2D {
 public:
  PoissonOperator2D(const ScalarField& V, const ScalarField& U, SolverOptions opt = {});
  ~PoissonOperator2D();
  PoissonOperator2D(PoissonOperator2D&&) noexcept;

  DiscretePoissonSolution solve(const ScalarField& f) const;
  // Solves -L psi = W^{-1} b with b summing to zero; result has weighted mean zero.
  Eigen::VectorXd solve_symmetric(const Eigen::VectorXd& b_scaled) const;

  const Grid& grid() const { return grid_; }
  // e^{-(V+U) + shift}, the shifted weight used internally
  const Eigen::VectorXd& shifted_weight() const { return w_; }
  double shift() const { return shift_; }
  double log_Z() const { return logZ_; }
  double log_Z_U() const { return logZU_; }
  const ScalarField& V() const { return V_; }
  const ScalarField& U() const { return U_; }

  // forward-difference gradient components
  void gradient(const Eigen::VectorXd& phi, Eigen::VectorXd& gx, Eigen::VectorXd& gy) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Grid grid_;
  ScalarField V_, U_;
  Eigen::VectorXd w_, expU_;
  double shift_ = 0.0, logZ_ = 0.0, logZU_ = 0.0;
  SolverOptions opt_;
};

VarianceEstimate discrete_variance(const ScalarField& V, const ScalarField& U, const ScalarField& f,
                                   const SolverOptions& opt = {});

// Variance of phi solved with an existing operator.
VarianceEstimate discrete_variance(const PoissonOperator2D& op, const DiscretePoissonSolution& sol);

// |grad_F phi|^2 at every node
ScalarField grad_sq_field(const PoissonOperator2D& op, const ScalarField& phi);

ScalarField discrete_gradient(const ScalarField& V, const ScalarField& U, const ScalarField& f, Metric metric,
                              const SolverOptions& opt = {});

struct PoincareDiag {
  double lambda0 = 0.0, lambda1 = 0.0, R_est = 0.0;
  bool exact = false;
};

double circulant_eigenvalue(int k, int n);
PoincareDiag discrete_poincare_diag(int n, const ScalarField& V, const ScalarField& U);

ScalarField solve_perturbed_psi(const ScalarField& V, const ScalarField& U, const ScalarField& dU,
                                const DiscretePoissonSolution& phi);

void write_triplets(const Eigen::SparseMatrix<double>& m, const std::string& path);

}  // namespace langbias
