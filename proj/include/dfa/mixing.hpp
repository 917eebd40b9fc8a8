#pragma once

#include <cstdint>
#include <utility>

#include "dfa/errors.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// Mixing coefficient lambda drawn from Beta(alpha, alpha). One coefficient is
// drawn per batch, not per sample.
struct MixCoefficient {
  double lambda_value = 0.5;
  double alpha = 1.0;
  std::uint64_t rng_seed = 0;

  static MixCoefficient fixed(double lam) { return {lam, 0.0, 0}; }
};

inline MixCoefficient sample_lambda(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ParameterError("sample_lambda: alpha must be positive");
  return {rng.beta_symmetric(alpha), alpha, rng.seed()};
}

// A mixed pair: the two source batches, their convex combination, and the
// matching mixed labels.
struct MixedTriple {
  Tensor x_i;
  Tensor x_j;
  Tensor x_hat;
  double lambda_value = 0.5;
  Tensor y_mixed;
};

// x_hat = lam*x_i + (1-lam)*x_j, y_mixed likewise. Sources are copied, never
// modified.
inline MixedTriple mix(const Tensor& x_i, const Tensor& x_j, const Tensor& y_i,
                       const Tensor& y_j, const MixCoefficient& lam) {
  check_same_shape(x_i, x_j, "mix: samples");
  check_same_shape(y_i, y_j, "mix: labels");
  const double l = lam.lambda_value;
  MixedTriple t;
  t.x_i = x_i;
  t.x_j = x_j;
  t.x_hat = lincomb(l, x_i, 1.0 - l, x_j);
  t.y_mixed = lincomb(l, y_i, 1.0 - l, y_j);
  t.lambda_value = l;
  return t;
}

}  // namespace dfa
