#pragma once

#include <string>

#include "langbias/grid.hpp"

namespace langbias {

// Inner products in which a functional gradient is expressed:
// L2(mu_U), L2(mu) and plain Lebesgue L2 (unnormalized densities e^{-V-U}, e^{-V}, 1).
enum class Metric { mu_U, mu, lebesgue };

Metric parse_metric(const std::string& name);
std::string metric_name(Metric m);

// Multiplier turning the mu_U-gradient into the gradient for metric m: 1, e^{-U}, e^{-U-V}.
ScalarField metric_gradient_weight(const ScalarField& V, const ScalarField& U, Metric m);
// Density of the inner product itself: e^{-V-U}, e^{-V}, 1.
ScalarField metric_density(const ScalarField& V, const ScalarField& U, Metric m);
double metric_inner_product(const ScalarField& g, const ScalarField& h, const ScalarField& V, const ScalarField& U,
                            Metric m);

}  // namespace langbias
