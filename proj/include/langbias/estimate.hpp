#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace langbias {

// Failed solve, non-finite objective, or an estimator with nothing to normalize by.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VarianceEstimate {
  double sigma2 = 0.0;
  double Z = 0.0;
  double Z_U = 0.0;
  double dirichlet = 0.0;  // mean of |grad phi|^2 under mu_U
  double I = 0.0;
  std::string backend;     // "closed_form_1d" or "fd2d"
  double tail_ratio = 0.0; // real1d truncation diagnostic
  std::vector<std::string> warnings;
};

}  // namespace langbias
