#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dfa/aggregation_loss.hpp"
#include "dfa/autodiff.hpp"
#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/mixing.hpp"
#include "dfa/model.hpp"
#include "dfa/ortho_head.hpp"
#include "dfa/rng.hpp"

namespace dfa {

enum class TrainMode { vanilla, mixup, manifold_mixup, dfa };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::mixup: return "mixup";
    case TrainMode::manifold_mixup: return "manifold-mixup";
    case TrainMode::dfa: return "dfa";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "mixup") return TrainMode::mixup;
  if (s == "manifold-mixup" || s == "manifold_mixup") return TrainMode::manifold_mixup;
  if (s == "dfa") return TrainMode::dfa;
  throw ConfigError("unknown train mode '" + s + "'");
}

struct LrSpan {
  double rate;
  int epochs;  // how many epochs this rate lasts; the last span is open-ended
};

struct TrainConfig {
  TrainMode mode = TrainMode::dfa;
  double alpha = 1.0;  // Beta(alpha, alpha) for the mixing coefficient
  double sigma = 0.05;
  Reduction reduction = Reduction::mean_squared;
  int epochs = 10;
  std::size_t batch_size = 64;
  std::vector<LrSpan> lr_schedule{{0.05, std::numeric_limits<int>::max()}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t rng_seed = 1;
  double score_scale = 1.0;  // softmax temperature on cosine scores
  ExtractorSpec extractor;

  // The full-scale schedule: 0.1/0.02/0.004/0.0008, stepping every 60 epochs.
  static std::vector<LrSpan> full_scale_schedule() {
    return {{0.1, 60}, {0.02, 60}, {0.004, 60}, {0.0008, 60}};
  }

  double lr_at(int epoch) const {
    int e = epoch;
    for (const auto& span : lr_schedule) {
      if (e < span.epochs) return span.rate;
      e -= span.epochs;
    }
    return lr_schedule.back().rate;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (pairing)");
    if (!(alpha > 0.0)) throw ConfigError("train: alpha must be positive");
    if (sigma < 0.0) throw ConfigError("train: sigma must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (lr_schedule.empty()) throw ConfigError("train: empty learning-rate schedule");
    for (const auto& s : lr_schedule)
      if (s.rate < 0.0 || s.epochs < 1) throw ConfigError("train: bad learning-rate span");
  }
};

namespace ops {

// Both cross-entropy terms of the mixed objective: the mixed label against
// (a) the prediction on the pivot embedding and (b) the prediction on the
// mixed embeddings. Targets must be probability rows.
// Scores scaled by the head's softmax temperature, the inference logits.
inline ad::Value head_logits(const OrthogonalHead& head, const ad::Value& v) {
  ad::Value s = ad::cosine_scores(v, head.weights, kCosineEps);
  return head.score_scale == 1.0 ? s : ad::scale(s, head.score_scale);
}

inline ad::Value classification_loss(const OrthogonalHead& head, const ad::Value& v_i,
                                     const ad::Value& v_j, const ad::Value& v_hat,
                                     const Tensor& y_i, const Tensor& y_j, double lam) {
  const Tensor y_mix = lincomb(lam, y_i, 1.0 - lam, y_j);
  ad::Value input_path = ad::ce_with_logits_mean(head_logits(head, v_hat), y_mix);
  ad::Value mixed_embed = ad::lincomb(lam, v_i, 1.0 - lam, v_j);
  ad::Value embed_path = ad::ce_with_logits_mean(head_logits(head, mixed_embed), y_mix);
  return ad::add(input_path, embed_path);
}

}  // namespace ops

inline double classification_loss(const OrthogonalHead& head, const Tensor& v_i, const Tensor& v_j,
                                  const Tensor& v_hat, const Tensor& y_i, const Tensor& y_j,
                                  double lam) {
  return ad::scalar_value(ops::classification_loss(head, ad::constant(v_i), ad::constant(v_j),
                                                   ad::constant(v_hat), y_i, y_j, lam));
}

struct EpochMetrics {
  int epoch = 0;
  double l_a = 0.0;
  double l_c = 0.0;
  double l_t = 0.0;
  double clean_accuracy = 0.0;
};

struct TrainResult {
  ModelSnapshot snapshot;
  std::vector<EpochMetrics> epochs;
};

// Owns the model being trained plus optimizer state. One logical thread of
// control; the seeded streams make the whole run deterministic.
class Trainer {
 public:
  Trainer(const Dataset& ds, const TrainConfig& cfg) : ds_(&ds), cfg_(cfg) {
    cfg_.validate();
    ds.validate();
    if (ds.n == 0) throw ConfigError("train: empty dataset");
    if (ds.channels != cfg_.extractor.in_channels || ds.height != cfg_.extractor.height ||
        ds.width != cfg_.extractor.width)
      throw ConfigError("train: dataset geometry does not match extractor spec");

    Rng master(cfg_.rng_seed);
    Rng model_rng = master.fork(1);
    Rng head_rng = master.fork(2);
    train_rng_ = master.fork(3);
    noise_rng_ = master.fork(4);
    shuffle_rng_ = master.fork(5);

    snap_.extractor = FeatureExtractor(cfg_.extractor, model_rng);
    snap_.head = init_orthogonal(ds.n_classes, snap_.extractor.embed_dim(), head_rng);
    snap_.head.score_scale = cfg_.score_scale;
    snap_.rng_state = train_rng_.state();

    momentum_.reserve(snap_.extractor.parameter_tensor_count());
    for (std::size_t i = 0; i < snap_.extractor.parameter_tensor_count(); ++i)
      momentum_.emplace_back(snap_.extractor.parameter(i).shape());
  }

  ModelSnapshot& snapshot() { return snap_; }
  const ModelSnapshot& snapshot() const { return snap_; }
  const TrainConfig& config() const { return cfg_; }

  // One optimizer step on one batch. Head weights are never touched.
  LossReport train_step(const std::vector<std::size_t>& batch_idx) {
    if (batch_idx.size() < 2) throw ConfigError("train_step: batch must have >= 2 samples");
    const Tensor x = ds_->batch(batch_idx);
    const Tensor y = ds_->onehot(batch_idx);
    const std::size_t B = batch_idx.size();

    ModelGraph graph(snap_.extractor);
    ad::Value loss_c, loss_a, total;
    LossReport report;

    switch (cfg_.mode) {
      case TrainMode::vanilla: {
        ad::Value v = graph.forward(ad::constant(x));
        loss_c = ad::ce_with_logits_mean(ops::head_logits(snap_.head, v), y);
        total = loss_c;
        break;
      }
      case TrainMode::mixup: {
        const auto perm = train_rng_.permutation(B);
        const double lam = sample_lambda(cfg_.alpha, train_rng_).lambda_value;
        const Tensor x_hat = mix_tensors(x, perm, lam);
        const Tensor y_mix = mix_rows(y, perm, lam);
        ad::Value v_hat = graph.forward(ad::constant(x_hat));
        loss_c = ad::ce_with_logits_mean(ops::head_logits(snap_.head, v_hat), y_mix);
        total = loss_c;
        break;
      }
      case TrainMode::manifold_mixup: {
        const auto perm = train_rng_.permutation(B);
        const double lam = sample_lambda(cfg_.alpha, train_rng_).lambda_value;
        const std::size_t layer = train_rng_.index(snap_.extractor.stage_count());
        const Tensor y_mix = mix_rows(y, perm, lam);
        ad::Value h = graph.manifold_mix_forward(ad::constant(x), ad::constant(gather(x, perm)),
                                                 lam, layer);
        loss_c = ad::ce_with_logits_mean(ops::head_logits(snap_.head, h), y_mix);
        total = loss_c;
        break;
      }
      case TrainMode::dfa: {
        const auto perm = train_rng_.permutation(B);
        const double lam = sample_lambda(cfg_.alpha, train_rng_).lambda_value;
        const Tensor x_hat = mix_tensors(x, perm, lam);

        ad::Value v_i = graph.forward(ad::constant(x));
        ad::Value v_j = ad::gather_rows(v_i, perm);
        ad::Value v_hat = graph.forward(ad::constant(x_hat));

        Tensor noise;
        const Tensor* noise_ptr = nullptr;
        if (cfg_.sigma > 0.0) {
          noise = noise_rng_.normal_tensor({B, snap_.extractor.embed_dim()}, cfg_.sigma);
          noise_ptr = &noise;
        }
        ad::Value residual = ops::aggregation_residual(v_i, v_j, v_hat, lam, noise_ptr);
        loss_a = ops::aggregation_loss(residual, cfg_.reduction);
        loss_c = ops::classification_loss(snap_.head, v_i, v_j, v_hat, y, gather(y, perm), lam);
        total = ad::add(loss_c, loss_a);
        break;
      }
    }

    report.l_c = ad::scalar_value(loss_c);
    report.l_a = loss_a ? ad::scalar_value(loss_a) : 0.0;
    report.l_t = report.l_a + report.l_c;
    if (!std::isfinite(report.l_t))
      throw NumericError("train_step " + std::to_string(step_) + ": non-finite loss (l_a=" +
                         std::to_string(report.l_a) + ", l_c=" + std::to_string(report.l_c) + ")");

    ad::backward(total);
    apply_sgd(graph, cfg_.lr_at(epoch_));
    ++step_;
    return report;
  }

  TrainResult run() {
    TrainResult result;
    for (epoch_ = 0; epoch_ < cfg_.epochs; ++epoch_) {
      double sum_a = 0.0, sum_c = 0.0;
      std::size_t steps = 0;
      const auto order = shuffle_rng_.permutation(ds_->n);
      for (std::size_t start = 0; start + 2 <= ds_->n; start += cfg_.batch_size) {
        const std::size_t b = std::min(cfg_.batch_size, ds_->n - start);
        if (b < 2) break;
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(start + b));
        const LossReport r = train_step(idx);
        sum_a += r.l_a;
        sum_c += r.l_c;
        ++steps;
      }
      EpochMetrics em;
      em.epoch = epoch_ + 1;
      em.l_a = steps ? sum_a / static_cast<double>(steps) : 0.0;
      em.l_c = steps ? sum_c / static_cast<double>(steps) : 0.0;
      em.l_t = em.l_a + em.l_c;
      em.clean_accuracy = accuracy(snap_, *ds_);
      result.epochs.push_back(em);
      snap_.epoch = epoch_ + 1;
    }
    snap_.rng_state = train_rng_.state();
    result.snapshot = snap_;
    return result;
  }

 private:
  Tensor gather(const Tensor& t, const std::vector<std::size_t>& perm) const {
    const std::size_t stride = t.size() / t.dim(0);
    std::vector<std::size_t> shape = t.shape();
    shape[0] = perm.size();
    Tensor out(shape);
    for (std::size_t i = 0; i < perm.size(); ++i)
      std::copy_n(t.data() + perm[i] * stride, stride, out.data() + i * stride);
    return out;
  }

  Tensor mix_tensors(const Tensor& x, const std::vector<std::size_t>& perm, double lam) const {
    return lincomb(lam, x, 1.0 - lam, gather(x, perm));
  }

  Tensor mix_rows(const Tensor& y, const std::vector<std::size_t>& perm, double lam) const {
    return lincomb(lam, y, 1.0 - lam, gather(y, perm));
  }

  void apply_sgd(const ModelGraph& graph, double lr) {
    for (std::size_t i = 0; i < snap_.extractor.parameter_tensor_count(); ++i) {
      Tensor& theta = snap_.extractor.parameter(i);
      const Tensor& g = graph.param_leaves()[i]->grad;
      Tensor& buf = momentum_[i];
      if (g.empty()) continue;  // no gradient reached this parameter
      for (std::size_t j = 0; j < theta.size(); ++j) {
        buf[j] = cfg_.momentum * buf[j] + g[j] + cfg_.weight_decay * theta[j];
        theta[j] -= lr * buf[j];
      }
    }
  }

  const Dataset* ds_;
  TrainConfig cfg_;
  ModelSnapshot snap_;
  std::vector<Tensor> momentum_;
  Rng train_rng_{0};
  Rng noise_rng_{0};
  Rng shuffle_rng_{0};
  int epoch_ = 0;
  std::size_t step_ = 0;
};

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  return Trainer(ds, cfg).run();
}

}  // namespace dfa
