#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/model.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

// One unit vector per class: the top right-singular vector of that class's
// embedding matrix. Prototypes are defined up to sign; all scoring uses the
// absolute cosine, so the sign never matters.
struct ClassPrototypeSet {
  Tensor prototypes;  // [n_classes, embed_dim]
  std::vector<std::size_t> class_counts;
  std::string checkpoint_hash;

  std::size_t n_classes() const { return prototypes.rank() == 2 ? prototypes.dim(0) : 0; }
  std::size_t embed_dim() const { return prototypes.rank() == 2 ? prototypes.dim(1) : 0; }
};

inline ClassPrototypeSet compute_prototypes(const ModelSnapshot& m, const Dataset& train) {
  train.validate();
  if (train.n == 0) throw DataError("compute_prototypes: empty dataset");
  const std::size_t D = m.extractor.embed_dim();
  const Tensor all = embed_dataset(m, train);

  ClassPrototypeSet set;
  set.prototypes = Tensor({train.n_classes, D});
  set.class_counts.assign(train.n_classes, 0);
  set.checkpoint_hash = m.config_hash;

  for (std::size_t k = 0; k < train.n_classes; ++k) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < train.n; ++i)
      if (static_cast<std::size_t>(train.labels[i]) == k) rows.push_back(i);
    if (rows.empty())
      throw DataError("compute_prototypes: class " + std::to_string(k) + " has no samples");
    set.class_counts[k] = rows.size();

    Eigen::MatrixXd a(rows.size(), D);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t d = 0; d < D; ++d) a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)) = all.at2(rows[r], d);

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
    Eigen::VectorXd v = svd.matrixV().col(0);
    v.normalize();
    for (std::size_t d = 0; d < D; ++d) set.prototypes.at2(k, static_cast<std::size_t>(d)) = v(static_cast<Eigen::Index>(d));
  }
  return set;
}

// Minimum angle between an embedding and any prototype direction:
// phi = min_k arccos(|v . p_k| / ||v||), in [0, pi/2].
inline double ood_score_embedding(const ClassPrototypeSet& protos, const double* v,
                                  std::size_t dim) {
  if (dim != protos.embed_dim()) throw DimensionError("ood_score: embedding dim mismatch");
  double nv = 0.0;
  for (std::size_t d = 0; d < dim; ++d) nv += v[d] * v[d];
  nv = std::sqrt(nv);
  if (nv == 0.0) throw DegenerateInputError("ood_score: zero-norm embedding");

  double best = 0.0;  // max |cos|
  for (std::size_t k = 0; k < protos.n_classes(); ++k) {
    double d_ = 0.0;
    for (std::size_t d = 0; d < dim; ++d) d_ += protos.prototypes.at2(k, d) * v[d];
    best = std::max(best, std::fabs(d_) / nv);
  }
  return std::acos(std::clamp(best, 0.0, 1.0));
}

inline double ood_score(const ModelSnapshot& m, const ClassPrototypeSet& protos, const Tensor& x) {
  const Tensor v = embed_batch(m, x);
  if (v.dim(0) != 1) throw DimensionError("ood_score: expects a single sample");
  return ood_score_embedding(protos, v.data(), v.dim(1));
}

inline std::vector<double> ood_scores_dataset(const ModelSnapshot& m,
                                              const ClassPrototypeSet& protos, const Dataset& ds) {
  const Tensor v = embed_dataset(m, ds);
  std::vector<double> out(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i)
    out[i] = ood_score_embedding(protos, v.data() + i * v.dim(1), v.dim(1));
  return out;
}

// ---------------------------------------------------------------------------
// F1-maximizing threshold sweep. ID samples are the positives; a sample is
// predicted ID when its score is <= threshold. Candidate thresholds are the
// midpoints between adjacent sorted unique scores plus a below-all and an
// above-all sentinel, which together realize every distinct confusion matrix.
// ---------------------------------------------------------------------------

struct SweepPoint {
  double threshold = 0.0;
  double f1 = 0.0;
};

struct SweepResult {
  double best_threshold = 0.0;
  double best_f1 = 0.0;
  std::vector<SweepPoint> curve;
};

inline double f1_at_threshold(const std::vector<double>& scores, const std::vector<int>& is_id,
                              double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred_id = scores[i] <= threshold;
    if (is_id[i]) {
      if (pred_id)
        ++tp;
      else
        ++fn;
    } else if (pred_id) {
      ++fp;
    }
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

inline SweepResult f1_sweep(const std::vector<double>& scores, const std::vector<int>& is_id) {
  if (scores.size() != is_id.size()) throw DimensionError("f1_sweep: length mismatch");
  bool has_id = false, has_ood = false;
  for (int v : is_id) (v ? has_id : has_ood) = true;
  if (!has_id || !has_ood)
    throw MetricError("f1_sweep: need both ID and OOD samples; F1 undefined otherwise");

  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::vector<double> thresholds;
  thresholds.reserve(uniq.size() + 1);
  thresholds.push_back(uniq.front() - 1.0);  // predict nothing ID
  for (std::size_t i = 0; i + 1 < uniq.size(); ++i)
    thresholds.push_back(0.5 * (uniq[i] + uniq[i + 1]));
  thresholds.push_back(uniq.back() + 1.0);  // predict everything ID

  SweepResult result;
  result.best_f1 = -1.0;
  for (double t : thresholds) {
    const double f1 = f1_at_threshold(scores, is_id, t);
    result.curve.push_back({t, f1});
    if (f1 > result.best_f1) {
      result.best_f1 = f1;
      result.best_threshold = t;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// End-to-end OOD evaluation.
// ---------------------------------------------------------------------------

struct OODReport {
  std::vector<double> scores;  // ID samples first, then OOD samples
  std::vector<int> labels;     // 1 = ID, 0 = OOD
  double best_threshold = 0.0;
  double best_f1 = 0.0;
};

inline OODReport evaluate_ood(const ModelSnapshot& m, const Dataset& prototype_source,
                              const Dataset& id_test, const Dataset& ood_test) {
  const ClassPrototypeSet protos = compute_prototypes(m, prototype_source);
  OODReport report;
  const auto id_scores = ood_scores_dataset(m, protos, id_test);
  const auto ood_scores = ood_scores_dataset(m, protos, ood_test);
  report.scores.reserve(id_scores.size() + ood_scores.size());
  report.scores.insert(report.scores.end(), id_scores.begin(), id_scores.end());
  report.scores.insert(report.scores.end(), ood_scores.begin(), ood_scores.end());
  report.labels.assign(id_scores.size(), 1);
  report.labels.insert(report.labels.end(), ood_scores.size(), 0);

  const SweepResult sweep = f1_sweep(report.scores, report.labels);
  report.best_threshold = sweep.best_threshold;
  report.best_f1 = sweep.best_f1;
  return report;
}

// Prototypes from the labeled ID set itself when no separate training set is
// supplied.
inline OODReport evaluate_ood(const ModelSnapshot& m, const Dataset& id_test,
                              const Dataset& ood_test) {
  return evaluate_ood(m, id_test, id_test, ood_test);
}

}  // namespace dfa
