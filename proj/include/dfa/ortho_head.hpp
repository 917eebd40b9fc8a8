#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dfa/errors.hpp"
#include "dfa/nn.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// Stabilizer added to cosine denominators on the differentiable path
// (training and attack gradients). The evaluation path is exact and rejects
// zero-norm embeddings instead.
inline constexpr double kCosineEps = 1e-12;

// The classifier head: one fixed unit-norm weight row per class, mutually
// orthogonal, scoring embeddings by cosine similarity. Weights are frozen
// after initialization; nothing in the library ever writes to them again.
struct OrthogonalHead {
  Tensor weights;  // [n_classes, embed_dim]
  bool frozen = true;
  std::size_t n_classes = 0;
  std::size_t embed_dim = 0;
  // softmax temperature on the cosine scores: probabilities use
  // score_scale * s. 1.0 keeps the raw-cosine softmax; larger values let the
  // bounded cosine logits saturate their targets.
  double score_scale = 1.0;

  double max_offdiagonal_dot() const {
    double m = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k)
      for (std::size_t l = k + 1; l < n_classes; ++l) {
        double d = 0.0;
        for (std::size_t j = 0; j < embed_dim; ++j) d += weights.at2(k, j) * weights.at2(l, j);
        m = std::max(m, std::fabs(d));
      }
    return m;
  }
};

// Cosine scores for one embedding plus their softmax probabilities.
struct ScoreVector {
  std::vector<double> scores;
  std::vector<double> probabilities;

  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.size(); ++k)
      if (scores[k] > scores[best]) best = k;
    return best;
  }
};

// Random rows orthonormalized by modified Gram-Schmidt with a second
// re-orthogonalization pass. Requires embed_dim >= n_classes.
inline OrthogonalHead init_orthogonal(std::size_t n_classes, std::size_t embed_dim, Rng& rng) {
  if (n_classes == 0) throw ParameterError("init_orthogonal: need at least one class");
  if (embed_dim < n_classes)
    throw CapacityError("init_orthogonal: embed_dim " + std::to_string(embed_dim) +
                        " < n_classes " + std::to_string(n_classes) +
                        "; orthogonality impossible");
  OrthogonalHead head;
  head.n_classes = n_classes;
  head.embed_dim = embed_dim;
  head.weights = Tensor({n_classes, embed_dim});

  for (std::size_t k = 0; k < n_classes; ++k) {
    std::vector<double> row(embed_dim);
    while (true) {
      for (auto& x : row) x = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t l = 0; l < k; ++l) {
          double d = 0.0;
          for (std::size_t j = 0; j < embed_dim; ++j) d += row[j] * head.weights.at2(l, j);
          for (std::size_t j = 0; j < embed_dim; ++j) row[j] -= d * head.weights.at2(l, j);
        }
      }
      double n = 0.0;
      for (double x : row) n += x * x;
      n = std::sqrt(n);
      if (n > 1e-8) {  // a degenerate draw is redrawn
        for (std::size_t j = 0; j < embed_dim; ++j) head.weights.at2(k, j) = row[j] / n;
        break;
      }
    }
  }
  return head;
}

// Evaluation-path scoring: exact cosine (no stabilizer). A zero-norm
// embedding has no direction and is rejected.
inline ScoreVector cosine_scores(const OrthogonalHead& head, const std::vector<double>& v) {
  if (v.size() != head.embed_dim)
    throw DimensionError("cosine_scores: embedding dim " + std::to_string(v.size()) +
                         " != head dim " + std::to_string(head.embed_dim));
  double nv = 0.0;
  for (double x : v) nv += x * x;
  nv = std::sqrt(nv);
  if (nv == 0.0) throw DegenerateInputError("cosine_scores: zero-norm embedding");

  ScoreVector sv;
  sv.scores.resize(head.n_classes);
  for (std::size_t k = 0; k < head.n_classes; ++k) {
    double d = 0.0, nw = 0.0;
    for (std::size_t j = 0; j < head.embed_dim; ++j) {
      d += head.weights.at2(k, j) * v[j];
      nw += head.weights.at2(k, j) * head.weights.at2(k, j);
    }
    sv.scores[k] = d / (std::sqrt(nw) * nv);
  }
  std::vector<double> logits(sv.scores);
  for (auto& x : logits) x *= head.score_scale;
  sv.probabilities = nn::softmax(logits);
  return sv;
}

// Batch variant over embedding rows, same exact-path semantics.
inline Tensor cosine_scores_batch(const OrthogonalHead& head, const Tensor& v) {
  if (v.rank() != 2 || v.dim(1) != head.embed_dim)
    throw DimensionError("cosine_scores_batch: bad embedding shape " + v.shape_str());
  for (std::size_t bi = 0; bi < v.dim(0); ++bi) {
    double nv = 0.0;
    for (std::size_t j = 0; j < head.embed_dim; ++j) nv += v.at2(bi, j) * v.at2(bi, j);
    if (nv == 0.0)
      throw DegenerateInputError("cosine_scores_batch: zero-norm embedding in row " +
                                 std::to_string(bi));
  }
  return nn::cosine_forward(v, head.weights, 0.0);
}

}  // namespace dfa
