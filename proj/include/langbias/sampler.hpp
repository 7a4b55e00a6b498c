#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langbias/grid.hpp"
#include "langbias/variance.hpp"

namespace langbias {

// Philox4x32-10 counter-based generator; (seed, stream) fixes the sequence.
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;
  Philox(std::uint64_t seed, std::uint64_t stream);

  static Block bijection(Block counter, std::array<std::uint32_t, 2> key);

  std::uint32_t next_u32();
  double uniform();  // in (0, 1)
  double normal();

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buf_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct SamplerConfig {
  double dt = 1e-3;
  double T = 100.0;
  double burn_in = 0.0;
  int replicas = 2;
  std::uint64_t seed = 0;
  std::optional<double> subsample_tau;
  bool zero_noise = false;  // test mode: xi forced to 0
  int interp_n = 1024;      // grid for field-only potentials and the initial draw

  void validate() const;
  long steps() const;
};

// Gradient of V + U: symbolic when both are formulas, else central differences on a grid.
class Drift {
 public:
  Drift(const Source& V, const Source& U, const Grid& grid);
  void total_gradient(std::span<const double> x, std::span<double> out) const;
  double U(std::span<const double> x) const;
  const Grid& grid() const { return grid_; }
  const ScalarField& total_field() const { return total_; }
  double u_shift() const { return u_shift_; }

 private:
  Grid grid_;
  Source U_;
  std::vector<Expression> symbolic_;  // d(V+U)/dx_k when available
  std::vector<ScalarField> fd_;       // otherwise
  ScalarField total_;                 // V + U at the nodes
  double u_shift_ = 0.0;
};

struct Trajectory {
  int dim = 1;
  double dt = 0.0;
  std::vector<double> x;  // state k at x[k*dim .. k*dim+dim)
  bool aborted = false;
  std::string diagnostic;

  std::size_t states() const { return x.size() / std::size_t(dim); }
  std::span<const double> state(std::size_t k) const { return {x.data() + k * dim, std::size_t(dim)}; }
};

// Draws X_0 from the grid approximation of mu_U.
std::vector<double> draw_stationary(const ScalarField& total, Philox& rng);

Trajectory simulate_trajectory(const Drift& drift, const SamplerConfig& cfg, std::uint64_t replica);

struct ReplicaEstimate {
  double value = 0.0;
  bool flagged = false;  // denominator underflow or aborted trajectory
};

ReplicaEstimate estimate_self_normalized(const Trajectory& traj, const Source& f, const Drift& drift,
                                         const SamplerConfig& cfg);

struct EstimatorResult {
  double estimate = 0.0;  // replica mean
  double estimate_se = 0.0;
  std::vector<double> per_replica;
  double empirical_sigma2 = 0.0;
  double standard_error = 0.0;  // of empirical_sigma2
  double I_ref = 0.0;
  double scale = 0.0;  // T - burn_in, or N for i.i.d. sampling
  int flagged = 0;
};

// Aggregates per-replica estimates; empirical_sigma2 is the sample variance of sqrt(scale)(est - I_ref).
EstimatorResult aggregate(const std::vector<double>& values, double I_ref, double scale);

EstimatorResult iid_estimate(const Source& f, const ScalarField& V, const ScalarField& U, long N, std::uint64_t seed,
                             int replicas);

struct EmpiricalComparison {
  EstimatorResult result;
  double predicted = 0.0;
  double z_score = 0.0;
};

// Problem fields give the analytic prediction; V_src/U_src drive the simulation.
EmpiricalComparison empirical_asym_variance(const Problem& p, const Source& V_src, const Source& U_src,
                                            const Source& f_src, const SamplerConfig& cfg);

}  // namespace langbias
