#include "langbias/metric.hpp"

#include <cmath>
#include <stdexcept>

namespace langbias {

Metric parse_metric(const std::string& name) {
  if (name == "mu_U") return Metric::mu_U;
  if (name == "mu") return Metric::mu;
  if (name == "lebesgue") return Metric::lebesgue;
  throw std::invalid_argument("unknown metric '" + name + "' (expected mu_U, mu or lebesgue)");
}

std::string metric_name(Metric m) {
  switch (m) {
    case Metric::mu_U: return "mu_U";
    case Metric::mu: return "mu";
    case Metric::lebesgue: return "lebesgue";
  }
  return "?";
}

ScalarField metric_gradient_weight(const ScalarField& V, const ScalarField& U, Metric m) {
  require_same_grid(V, U);
  std::vector<double> w(V.size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    switch (m) {
      case Metric::mu_U: w[l] = 1.0; break;
      case Metric::mu: w[l] = std::exp(-U[l]); break;
      case Metric::lebesgue: w[l] = std::exp(-U[l] - V[l]); break;
    }
  }
  return ScalarField(V.grid(), std::move(w));
}

ScalarField metric_density(const ScalarField& V, const ScalarField& U, Metric m) {
  require_same_grid(V, U);
  std::vector<double> w(V.size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    switch (m) {
      case Metric::mu_U: w[l] = std::exp(-U[l] - V[l]); break;
      case Metric::mu: w[l] = std::exp(-V[l]); break;
      case Metric::lebesgue: w[l] = 1.0; break;
    }
  }
  return ScalarField(V.grid(), std::move(w));
}

double metric_inner_product(const ScalarField& g, const ScalarField& h, const ScalarField& V, const ScalarField& U,
                            Metric m) {
  return weighted_inner_product(g, h, metric_density(V, U, m));
}

}  // namespace langbias
