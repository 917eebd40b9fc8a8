#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dfa/autodiff.hpp"
#include "dfa/errors.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// How the aggregation residual is reduced to a scalar. The prose form is
// mean squared error; the literal integrand form is the batch mean of
// sqrt(||residual row||_2). They disagree, so both are selectable;
// mean_squared is the default.
enum class Reduction { mean_squared, root_of_norm };

inline const char* to_string(Reduction r) {
  return r == Reduction::mean_squared ? "mean-squared" : "root-of-norm";
}

inline Reduction reduction_from_string(const std::string& s) {
  if (s == "mean-squared" || s == "mean_squared" || s == "mse") return Reduction::mean_squared;
  if (s == "root-of-norm" || s == "root_of_norm" || s == "sqrt") return Reduction::root_of_norm;
  throw ConfigError("unknown reduction '" + s + "'");
}

struct AggregationLossConfig {
  double sigma = 0.05;  // stddev of the Gaussian noise added to the residual
  Reduction reduction = Reduction::mean_squared;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (sigma < 0.0) throw ParameterError("aggregation loss: sigma must be >= 0");
  }
};

// Per-step loss components; l_t is always the plain sum of the other two.
struct LossReport {
  double l_a = 0.0;
  double l_c = 0.0;
  double l_t = 0.0;
};

// residual = lam*v_i + (1-lam)*v_j - v_hat (+ noise). Noise may be null.
inline Tensor aggregation_residual(const Tensor& v_i, const Tensor& v_j, const Tensor& v_hat,
                                   double lam, const Tensor* noise = nullptr) {
  check_same_shape(v_i, v_j, "aggregation_residual");
  check_same_shape(v_i, v_hat, "aggregation_residual");
  Tensor r(v_i.shape());
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = lam * v_i[i] + (1.0 - lam) * v_j[i] - v_hat[i];
  if (noise) {
    check_same_shape(r, *noise, "aggregation_residual: noise");
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += (*noise)[i];
  }
  return r;
}

inline double aggregation_loss(const Tensor& residual, const AggregationLossConfig& cfg) {
  if (!residual.all_finite()) throw NumericError("aggregation_loss: non-finite residual");
  if (residual.empty()) return 0.0;
  if (cfg.reduction == Reduction::mean_squared) {
    double s = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i) s += residual[i] * residual[i];
    return s / static_cast<double>(residual.size());
  }
  // root-of-norm: rows are pairs; a rank-1 tensor is a single pair.
  const std::size_t B = residual.rank() == 2 ? residual.dim(0) : 1;
  const std::size_t D = residual.size() / B;
  double total = 0.0;
  for (std::size_t bi = 0; bi < B; ++bi) {
    double ssq = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double x = residual[bi * D + d];
      ssq += x * x;
    }
    total += std::pow(ssq, 0.25);
  }
  return total / static_cast<double>(B);
}

// Differentiable-path versions used inside training steps.
namespace ops {

inline ad::Value aggregation_residual(const ad::Value& v_i, const ad::Value& v_j,
                                      const ad::Value& v_hat, double lam,
                                      const Tensor* noise = nullptr) {
  ad::Value mixed = ad::lincomb(lam, v_i, 1.0 - lam, v_j);
  ad::Value r = ad::lincomb(1.0, mixed, -1.0, v_hat);
  if (noise) r = ad::add_constant(r, *noise);
  return r;
}

inline ad::Value aggregation_loss(const ad::Value& residual, Reduction reduction) {
  return reduction == Reduction::mean_squared ? ad::mse_all(residual)
                                              : ad::sqrt_norm_rows_mean(residual);
}

}  // namespace ops

}  // namespace dfa
