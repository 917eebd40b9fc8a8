#pragma once

// Brute-force reference implementations used to pin expected values. They
// deliberately avoid the library's own code paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dfa/tensor.hpp"

namespace dfa::test {

// Dominant right-singular vector of the row matrix a [m, d] by power
// iteration on the Gram matrix G = a^T a. Sign is arbitrary.
inline std::vector<double> power_iteration_top_singular(const Tensor& a, int max_iters = 20000,
                                                        double tol = 1e-14) {
  const std::size_t m = a.dim(0), d = a.dim(1);
  std::vector<double> gram(d * d, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) gram[i * d + j] += a.at2(r, i) * a.at2(r, j);

  // deterministic start with distinct entries so it is never orthogonal to
  // the dominant direction by symmetry
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
  double n = 0.0;
  for (double x : v) n += x * x;
  for (auto& x : v) x /= std::sqrt(n);

  std::vector<double> w(d);
  for (int it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < d; ++i) {
      w[i] = 0.0;
      for (std::size_t j = 0; j < d; ++j) w[i] += gram[i * d + j] * v[j];
    }
    double wn = 0.0;
    for (double x : w) wn += x * x;
    wn = std::sqrt(wn);
    if (wn == 0.0) return v;  // zero matrix: any unit vector
    double delta = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      w[i] /= wn;
      delta = std::max(delta, std::fabs(std::fabs(w[i]) - std::fabs(v[i])));
    }
    v = w;
    if (delta < tol) break;
  }
  return v;
}

// Exhaustive threshold enumeration for the F1 sweep: every distinct score is
// tried as an inclusive threshold, plus a predict-nothing threshold below all
// scores. Positives are ID samples, predicted ID when score <= threshold.
struct BruteForceF1 {
  double best_threshold = 0.0;
  double best_f1 = -1.0;
};

inline BruteForceF1 brute_force_f1(const std::vector<double>& scores,
                                   const std::vector<int>& is_id) {
  std::vector<double> cands = scores;
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  cands.insert(cands.begin(), cands.front() - 1.0);

  BruteForceF1 out;
  for (double t : cands) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool pred = scores[i] <= t;
      if (is_id[i] && pred) ++tp;
      if (is_id[i] && !pred) ++fn;
      if (!is_id[i] && pred) ++fp;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    const double f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    if (f1 > out.best_f1) {
      out.best_f1 = f1;
      out.best_threshold = t;
    }
  }
  return out;
}

// Plain-definition cross-entropy of a target distribution against softmax of
// scores, one row at a time.
inline double ce_oracle_row(const std::vector<double>& target, const std::vector<double>& scores) {
  double m = scores[0];
  for (double s : scores) m = std::max(m, s);
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  double ce = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double logp = scores[k] - m - std::log(z);
    if (target[k] != 0.0) ce -= target[k] * logp;
  }
  return ce;
}

}  // namespace dfa::test
