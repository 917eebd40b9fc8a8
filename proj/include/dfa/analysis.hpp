#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/mixing.hpp"
#include "dfa/model.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// Embedding compactness: per-class mean (over dimensions) of the
// per-dimension population standard deviation, plus the same statistic over
// the pooled embedding space.
struct CompactnessReport {
  std::vector<double> per_class_std;
  double total_std = 0.0;
  std::vector<std::size_t> counts;
};

namespace detail {

// Mean over columns of the per-column population std of the selected rows.
inline double mean_dim_std(const Tensor& v, const std::vector<std::size_t>& rows) {
  const std::size_t D = v.dim(1);
  double acc = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    double mean = 0.0;
    for (auto r : rows) mean += v.at2(r, d);
    mean /= static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto r : rows) {
      const double dv = v.at2(r, d) - mean;
      ss += dv * dv;
    }
    acc += std::sqrt(ss / static_cast<double>(rows.size()));
  }
  return acc / static_cast<double>(D);
}

}  // namespace detail

inline CompactnessReport compactness(const ModelSnapshot& m, const Dataset& ds) {
  ds.validate();
  if (ds.n == 0) throw DataError("compactness: empty dataset");
  const Tensor v = embed_dataset(m, ds);

  CompactnessReport report;
  report.per_class_std.resize(ds.n_classes);
  report.counts.resize(ds.n_classes);
  for (std::size_t k = 0; k < ds.n_classes; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.n; ++i)
      if (static_cast<std::size_t>(ds.labels[i]) == k) rows.push_back(i);
    if (rows.empty()) throw DataError("compactness: class " + std::to_string(k) + " is empty");
    report.counts[k] = rows.size();
    report.per_class_std[k] = detail::mean_dim_std(v, rows);
  }
  report.total_std = detail::mean_dim_std(v, Dataset::iota_indices(ds.n));
  return report;
}

// Empirical probe of how far the extractor is from commuting with convex
// combination: per pair, || lam*F(x_i) + (1-lam)*F(x_j) - F(lam*x_i + (1-lam)*x_j) ||_2.
struct LipschitzProbe {
  std::vector<double> per_pair_residuals;
  std::vector<double> lambdas;
  double mean_residual = 0.0;
  double max_residual = 0.0;
};

inline LipschitzProbe lipschitz_residual(const ModelSnapshot& m, const Dataset& ds,
                                         std::size_t n_pairs, Rng& rng,
                                         std::size_t batch_size = 128) {
  ds.validate();
  if (ds.n < 2) throw DataError("lipschitz_residual: need at least two samples");
  const std::size_t D = m.extractor.embed_dim();
  const Tensor all = embed_dataset(m, ds);

  LipschitzProbe probe;
  probe.per_pair_residuals.reserve(n_pairs);
  probe.lambdas.reserve(n_pairs);

  std::vector<std::size_t> pi(n_pairs), pj(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    pi[p] = rng.index(ds.n);
    pj[p] = rng.index(ds.n);
    probe.lambdas.push_back(rng.uniform());
  }

  for (std::size_t start = 0; start < n_pairs; start += batch_size) {
    const std::size_t b = std::min(batch_size, n_pairs - start);
    // mixed inputs for this slab share one forward pass
    Tensor mixed({b, ds.channels, ds.height, ds.width});
    const std::size_t s = ds.sample_size();
    for (std::size_t i = 0; i < b; ++i) {
      const double lam = probe.lambdas[start + i];
      const double* xi = ds.pixels.data() + pi[start + i] * s;
      const double* xj = ds.pixels.data() + pj[start + i] * s;
      for (std::size_t q = 0; q < s; ++q) mixed.data()[i * s + q] = lam * xi[q] + (1.0 - lam) * xj[q];
    }
    const Tensor v_hat = embed_batch(m, mixed);
    for (std::size_t i = 0; i < b; ++i) {
      const double lam = probe.lambdas[start + i];
      double ss = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        const double r = lam * all.at2(pi[start + i], d) + (1.0 - lam) * all.at2(pj[start + i], d) -
                         v_hat.at2(i, d);
        ss += r * r;
      }
      probe.per_pair_residuals.push_back(std::sqrt(ss));
    }
  }

  for (double r : probe.per_pair_residuals) {
    probe.mean_residual += r;
    probe.max_residual = std::max(probe.max_residual, r);
  }
  if (!probe.per_pair_residuals.empty())
    probe.mean_residual /= static_cast<double>(probe.per_pair_residuals.size());
  return probe;
}

// Fixed-pair variant used by tests that need exact endpoint lambdas.
inline double lipschitz_residual_pair(const ModelSnapshot& m, const Tensor& x_i, const Tensor& x_j,
                                      double lam) {
  const Tensor vi = embed_batch(m, x_i);
  const Tensor vj = embed_batch(m, x_j);
  const Tensor vh = embed_batch(m, lincomb(lam, x_i, 1.0 - lam, x_j));
  double ss = 0.0;
  for (std::size_t d = 0; d < vi.size(); ++d) {
    const double r = lam * vi[d] + (1.0 - lam) * vj[d] - vh[d];
    ss += r * r;
  }
  return std::sqrt(ss);
}

}  // namespace dfa
