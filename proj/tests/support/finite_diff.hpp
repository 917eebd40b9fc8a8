#pragma once

// Central-difference oracles for gradient checking. Everything here is
// independent of the library's reverse-mode path: gradients are rebuilt from
// scratch by re-evaluating the loss closure around perturbed entries.

#include <algorithm>
#include <cmath>
#include <functional>

#include "dfa/tensor.hpp"

namespace dfa::test {

// Central differences with a step scaled to the entry magnitude.
inline Tensor central_diff(Tensor& theta, const std::function<double()>& eval,
                           double base_h = 1e-6) {
  Tensor g(theta.shape());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    const double h = base_h * std::max(1.0, std::fabs(orig));
    theta[i] = orig + h;
    const double fp = eval();
    theta[i] = orig - h;
    const double fm = eval();
    theta[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double n) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-6});
}

inline double max_rel_err(const Tensor& analytic, const Tensor& numeric) {
  double m = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    m = std::max(m, rel_err(analytic[i], numeric[i]));
  return m;
}

}  // namespace dfa::test
