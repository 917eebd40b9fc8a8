#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dfa/autodiff.hpp"
#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/model.hpp"
#include "dfa/ortho_head.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

enum class AttackMethod { fgsm, pgd, cw };

inline const char* to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::pgd: return "pgd";
    case AttackMethod::cw: return "cw";
  }
  return "?";
}

inline AttackMethod attack_method_from_string(const std::string& s) {
  if (s == "fgsm") return AttackMethod::fgsm;
  if (s == "pgd") return AttackMethod::pgd;
  if (s == "cw") return AttackMethod::cw;
  throw ConfigError("unknown attack method '" + s + "'");
}

// Budgets follow the usual conventions: epsilon and step size are l-inf
// fractions of the [0,1] pixel range; cw runs unconstrained l2 with
// trade-off constant c.
struct AttackConfig {
  AttackMethod method = AttackMethod::pgd;
  double epsilon = 4.0 / 255.0;
  double step_size = 2.0 / 255.0;
  int steps = 8;
  double cw_c = 0.01;
  double cw_lr = 0.01;
  bool random_start = true;
  bool cw_tanh = true;  // tanh change-of-variable; false = projected descent
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (epsilon < 0.0 || epsilon > 1.0) throw ParameterError("attack: epsilon must be in [0,1]");
    if (method != AttackMethod::fgsm && steps < 1)
      throw ParameterError("attack: steps must be >= 1");
    if (method == AttackMethod::pgd && !(step_size > 0.0))
      throw ParameterError("attack: pgd step_size must be positive");
    if (method == AttackMethod::cw && (!(cw_c >= 0.0) || !(cw_lr > 0.0)))
      throw ParameterError("attack: cw requires c >= 0 and positive learning rate");
  }

  std::string name() const {
    char buf[96];
    switch (method) {
      case AttackMethod::fgsm:
        std::snprintf(buf, sizeof buf, "fgsm(eps=%g)", epsilon);
        break;
      case AttackMethod::pgd:
        std::snprintf(buf, sizeof buf, "pgd-%d(eps=%g,step=%g)", steps, epsilon, step_size);
        break;
      case AttackMethod::cw:
        std::snprintf(buf, sizeof buf, "cw-%d(c=%g)", steps, cw_c);
        break;
    }
    return buf;
  }
};

// Attacks are written against a score-graph builder so the same machinery
// runs on any differentiable classifier; the snapshot wrappers below bind it
// to the real inference path (extractor + cosine head).
using ScoreBuilder = std::function<ad::Value(const ad::Value& x)>;

inline ScoreBuilder snapshot_scores(const ModelSnapshot& m) {
  return [&m](const ad::Value& x) {
    ModelGraph graph(m.extractor, /*params_require_grad=*/false);
    ad::Value s = ad::cosine_scores(graph.forward(x), m.head.weights, kCosineEps);
    return m.head.score_scale == 1.0 ? s : ad::scale(s, m.head.score_scale);
  };
}

namespace detail {

inline void check_pixel_range(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= 0.0 && x[i] <= 1.0))
      throw InputError("attack: input pixels must lie in [0,1]");
}

inline Tensor onehot_labels(const std::vector<int>& y, std::size_t n_classes) {
  Tensor t({y.size(), n_classes});
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= n_classes)
      throw InputError("attack: label out of range");
    t.at2(i, static_cast<std::size_t>(y[i])) = 1.0;
  }
  return t;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Clip to [0,1] and enforce the epsilon ball exactly in double arithmetic:
// the sum x + delta can round half an ulp outside the ball, so nudge back
// with nextafter until the float predicate |adv - x| <= eps holds.
inline Tensor materialize(const Tensor& x, const Tensor& delta, double eps) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = std::clamp(x[i] + delta[i], 0.0, 1.0);
    while (v - x[i] > eps) v = std::nextafter(v, x[i]);
    while (v - x[i] < -eps) v = std::nextafter(v, x[i]);
    out[i] = v;
  }
  return out;
}

// d(mean CE)/dx through the supplied score graph.
inline Tensor ce_input_gradient(const ScoreBuilder& scores_of, const Tensor& x,
                                const Tensor& targets) {
  ad::Value xin = ad::leaf(x, true);
  ad::Value loss = ad::ce_with_logits_mean(scores_of(xin), targets);
  ad::backward(loss);
  if (!xin->grad.all_finite()) throw NumericError("attack: non-finite input gradient");
  return xin->grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FGSM: x_adv = clip(x + eps * sign(grad CE)).
// ---------------------------------------------------------------------------

inline Tensor fgsm(const ScoreBuilder& scores_of, const Tensor& x, const std::vector<int>& y,
                   std::size_t n_classes, double epsilon) {
  if (epsilon < 0.0) throw ParameterError("fgsm: epsilon must be >= 0");
  detail::check_pixel_range(x);
  const Tensor g = detail::ce_input_gradient(scores_of, x, detail::onehot_labels(y, n_classes));
  Tensor delta(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) delta[i] = epsilon * detail::sign(g[i]);
  return detail::materialize(x, delta, epsilon);
}

inline Tensor fgsm(const ModelSnapshot& m, const Tensor& x, const std::vector<int>& y,
                   double epsilon) {
  return fgsm(snapshot_scores(m), x, y, m.head.n_classes, epsilon);
}

// ---------------------------------------------------------------------------
// PGD: iterated FGSM from a random start, projected onto the epsilon ball and
// the pixel box each step. The iterate is tracked in delta space, so
// pgd(steps=1, random_start=false, step_size >= eps) reproduces fgsm bit for
// bit.
// ---------------------------------------------------------------------------

inline Tensor pgd(const ScoreBuilder& scores_of, const Tensor& x, const std::vector<int>& y,
                  std::size_t n_classes, double epsilon, double step_size, int steps,
                  bool random_start, Rng& rng) {
  if (epsilon < 0.0) throw ParameterError("pgd: epsilon must be >= 0");
  if (!(step_size > 0.0)) throw ParameterError("pgd: step_size must be positive");
  if (steps < 1) throw ParameterError("pgd: steps must be >= 1");
  detail::check_pixel_range(x);
  const Tensor targets = detail::onehot_labels(y, n_classes);

  Tensor delta(x.shape());
  if (random_start && epsilon > 0.0) delta = rng.uniform_tensor(x.shape(), -epsilon, epsilon);

  for (int k = 0; k < steps; ++k) {
    const Tensor adv = detail::materialize(x, delta, epsilon);
    const Tensor g = detail::ce_input_gradient(scores_of, adv, targets);
    for (std::size_t i = 0; i < x.size(); ++i)
      delta[i] = std::clamp(delta[i] + step_size * detail::sign(g[i]), -epsilon, epsilon);
  }
  return detail::materialize(x, delta, epsilon);
}

inline Tensor pgd(const ModelSnapshot& m, const Tensor& x, const std::vector<int>& y,
                  double epsilon, double step_size, int steps, bool random_start, Rng& rng) {
  return pgd(snapshot_scores(m), x, y, m.head.n_classes, epsilon, step_size, steps, random_start,
             rng);
}

// ---------------------------------------------------------------------------
// CW-l2: minimize ||delta||_2^2 + c * max(z_true - max_other, -kappa) with
// kappa = 0 on the raw scores. Box constraint via tanh change of variable by
// default, plain projected descent otherwise. Returns the smallest successful
// perturbation seen per sample, or the final iterate if never successful.
// ---------------------------------------------------------------------------

inline Tensor cw(const ScoreBuilder& scores_of, const Tensor& x, const std::vector<int>& y,
                 double c, int steps, double lr, bool tanh_mode = true) {
  if (!(c >= 0.0)) throw ParameterError("cw: c must be >= 0");
  if (steps < 1) throw ParameterError("cw: steps must be >= 1");
  if (!(lr > 0.0)) throw ParameterError("cw: learning rate must be positive");
  detail::check_pixel_range(x);
  if (c == 0.0) return x;  // pure distance objective: minimum is delta = 0

  const std::size_t B = x.dim(0);
  const std::size_t stride = x.size() / B;

  Tensor best = x;
  std::vector<double> best_dist(B, std::numeric_limits<double>::infinity());

  auto consider = [&](const Tensor& adv, const Tensor& scores) {
    for (std::size_t bi = 0; bi < B; ++bi) {
      std::size_t pred = 0;
      for (std::size_t k = 1; k < scores.dim(1); ++k)
        if (scores.at2(bi, k) > scores.at2(bi, pred)) pred = k;
      if (static_cast<int>(pred) == y[bi]) continue;
      double d2 = 0.0;
      for (std::size_t j = 0; j < stride; ++j) {
        const double dv = adv[bi * stride + j] - x[bi * stride + j];
        d2 += dv * dv;
      }
      if (d2 < best_dist[bi]) {
        best_dist[bi] = d2;
        std::copy_n(adv.data() + bi * stride, stride, best.data() + bi * stride);
      }
    }
  };

  Tensor var(x.shape());  // tanh-space variable, or the image directly
  if (tanh_mode) {
    for (std::size_t i = 0; i < x.size(); ++i)
      var[i] = std::atanh((2.0 * x[i] - 1.0) * (1.0 - 1e-6));
  } else {
    var = x;
  }

  Tensor last = x;
  for (int k = 0; k < steps; ++k) {
    ad::Value w = ad::leaf(var, true);
    ad::Value adv =
        tanh_mode ? ad::add_constant(ad::scale(ad::tanh(w), 0.5), Tensor::full(x.shape(), 0.5)) : w;
    ad::Value scores = scores_of(adv);
    ad::Value objective =
        ad::add(ad::l2sq_diff_sum(adv, x), ad::scale(ad::margin_sum(scores, y, 0.0), c));
    ad::backward(objective);
    if (!w->grad.all_finite()) throw NumericError("cw: non-finite gradient");

    consider(adv->val, scores->val);
    last = adv->val;
    for (std::size_t i = 0; i < var.size(); ++i) var[i] -= lr * w->grad[i];
    if (!tanh_mode)
      for (std::size_t i = 0; i < var.size(); ++i) var[i] = std::clamp(var[i], 0.0, 1.0);
  }

  for (std::size_t bi = 0; bi < B; ++bi)
    if (!std::isfinite(best_dist[bi]))
      std::copy_n(last.data() + bi * stride, stride, best.data() + bi * stride);
  return best;
}

inline Tensor cw(const ModelSnapshot& m, const Tensor& x, const std::vector<int>& y, double c,
                 int steps, double lr, bool tanh_mode = true) {
  return cw(snapshot_scores(m), x, y, c, steps, lr, tanh_mode);
}

inline Tensor run_attack(const ModelSnapshot& m, const Tensor& x, const std::vector<int>& y,
                         const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  switch (cfg.method) {
    case AttackMethod::fgsm: return fgsm(m, x, y, cfg.epsilon);
    case AttackMethod::pgd:
      return pgd(m, x, y, cfg.epsilon, cfg.step_size, cfg.steps, cfg.random_start, rng);
    case AttackMethod::cw: return cw(m, x, y, cfg.cw_c, cfg.steps, cfg.cw_lr, cfg.cw_tanh);
  }
  throw ParameterError("run_attack: bad method enum");
}

struct AttackResult {
  std::string name;
  double accuracy = 0.0;
};

// Per-attack accuracy plus clean accuracy and mean +- population std across
// the attack list.
struct RobustnessReport {
  double clean_accuracy = 0.0;
  std::vector<AttackResult> attacks;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

inline RobustnessReport evaluate_robustness(const ModelSnapshot& m, const Dataset& test,
                                            const std::vector<AttackConfig>& configs,
                                            std::size_t batch_size = 128) {
  if (test.n == 0) throw InputError("evaluate_robustness: empty test set");
  RobustnessReport report;
  report.clean_accuracy = accuracy(m, test, batch_size);

  for (const auto& cfg : configs) {
    Rng rng(cfg.rng_seed);
    std::size_t hits = 0;
    for (std::size_t start = 0; start < test.n; start += batch_size) {
      const std::size_t b = std::min(batch_size, test.n - start);
      const auto idx = Dataset::iota_indices(b, start);
      const Tensor x = test.batch(idx);
      const std::vector<int> y = test.label_subset(idx);
      const Tensor adv = run_attack(m, x, y, cfg, rng);
      const auto pred = predict_batch(m, adv);
      for (std::size_t i = 0; i < b; ++i) hits += pred[i] == y[i];
    }
    report.attacks.push_back({cfg.name(), static_cast<double>(hits) / static_cast<double>(test.n)});
  }

  if (!report.attacks.empty()) {
    double sum = 0.0;
    for (const auto& a : report.attacks) sum += a.accuracy;
    report.mean_accuracy = sum / static_cast<double>(report.attacks.size());
    double ss = 0.0;
    for (const auto& a : report.attacks) {
      const double d = a.accuracy - report.mean_accuracy;
      ss += d * d;
    }
    report.std_accuracy = std::sqrt(ss / static_cast<double>(report.attacks.size()));
  }
  return report;
}

}  // namespace dfa
