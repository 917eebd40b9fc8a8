#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dfa/autodiff.hpp"
#include "dfa/dataset.hpp"
#include "dfa/errors.hpp"
#include "dfa/ortho_head.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"

namespace dfa {

enum class Arch { identity, linear, small_cnn };
enum class Activation { relu, identity };

inline const char* to_string(Arch a) {
  switch (a) {
    case Arch::identity: return "identity";
    case Arch::linear: return "linear";
    case Arch::small_cnn: return "small-cnn";
  }
  return "?";
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "identity") return Arch::identity;
  if (s == "linear") return Arch::linear;
  if (s == "small-cnn" || s == "small_cnn" || s == "smallcnn") return Arch::small_cnn;
  throw ConfigError("unknown arch '" + s + "'");
}

inline const char* to_string(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + s + "'");
}

// Architecture hyperparameters for the feature extractor F. The small CNN is
// two conv/act/pool blocks plus a dense projection to the embedding; the
// linear and identity variants exist for oracles and analytic tests.
struct ExtractorSpec {
  Arch arch = Arch::small_cnn;
  std::size_t in_channels = 1;
  std::size_t height = 12;
  std::size_t width = 12;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t embed_dim = 64;
  Activation activation = Activation::relu;
  // Embedding output scale. With normalize_embedding the embedding is
  // projected onto the sphere of this radius, the desk-scale stand-in for how
  // normalization layers pin activation scale in larger backbones; the last
  // layer then maps inputs into a fixed norm ball. Without it the scale is a
  // plain output gain. The cosine head is scale-invariant either way.
  double embed_scale = 8.0;
  bool normalize_embedding = true;

  std::size_t input_dim() const { return in_channels * height * width; }
};

// The feature extractor: named parameter tensors plus the forward rule.
// Value semantics; copying a FeatureExtractor deep-copies its parameters.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;

  FeatureExtractor(ExtractorSpec spec, Rng& rng) : spec_(spec) {
    switch (spec_.arch) {
      case Arch::identity:
        spec_.embed_dim = spec_.input_dim();
        break;
      case Arch::linear:
        add_dense_params("fc", spec_.input_dim(), spec_.embed_dim, rng);
        break;
      case Arch::small_cnn: {
        if (spec_.height % 4 || spec_.width % 4)
          throw ParameterError("small-cnn: height and width must be divisible by 4");
        add_conv_params("conv1", spec_.in_channels, spec_.conv1_channels, rng);
        add_conv_params("conv2", spec_.conv1_channels, spec_.conv2_channels, rng);
        add_dense_params("fc", spec_.conv2_channels * (spec_.height / 4) * (spec_.width / 4),
                         spec_.embed_dim, rng);
        break;
      }
    }
  }

  const ExtractorSpec& spec() const { return spec_; }
  std::size_t embed_dim() const { return spec_.embed_dim; }

  std::size_t parameter_tensor_count() const { return params_.size(); }
  const std::string& parameter_name(std::size_t i) const { return names_[i]; }
  Tensor& parameter(std::size_t i) { return params_[i]; }
  const Tensor& parameter(std::size_t i) const { return params_[i]; }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& p : params_) c += p.size();
    return c;
  }

  // Mixing points: 0 is the input, the last is the embedding.
  std::size_t stage_count() const {
    return spec_.arch == Arch::small_cnn ? 3 : 1;
  }
  std::size_t mix_point_count() const { return stage_count() + 1; }

  void check_input(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels || x.dim(2) != spec_.height ||
        x.dim(3) != spec_.width)
      throw DimensionError("extractor: input shape " + x.shape_str() + " does not match spec");
  }

 private:
  // He-uniform weight init; biases stay at the smaller classic bound.
  void add_conv_params(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    const double fan_in = static_cast<double>(cin * 3 * 3);
    names_.push_back(name + ".weight");
    params_.push_back(rng.uniform_tensor({cout, cin, 3, 3}, -std::sqrt(6.0 / fan_in),
                                         std::sqrt(6.0 / fan_in)));
    names_.push_back(name + ".bias");
    params_.push_back(rng.uniform_tensor({cout}, -std::sqrt(1.0 / fan_in), std::sqrt(1.0 / fan_in)));
  }

  void add_dense_params(const std::string& name, std::size_t din, std::size_t dout, Rng& rng) {
    const double fan_in = static_cast<double>(din);
    names_.push_back(name + ".weight");
    params_.push_back(
        rng.uniform_tensor({dout, din}, -std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in)));
    names_.push_back(name + ".bias");
    params_.push_back(rng.uniform_tensor({dout}, -std::sqrt(1.0 / fan_in), std::sqrt(1.0 / fan_in)));
  }

  ExtractorSpec spec_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

// Binds an extractor's parameters into leaf nodes for one computation graph.
// Every forward call on the same ModelGraph shares the same leaves, so
// gradients from multiple passes (x_i, x_j, the pivot) accumulate per
// parameter in one backward sweep.
class ModelGraph {
 public:
  explicit ModelGraph(const FeatureExtractor& fe, bool params_require_grad = true) : fe_(&fe) {
    leaves_.reserve(fe.parameter_tensor_count());
    for (std::size_t i = 0; i < fe.parameter_tensor_count(); ++i)
      leaves_.push_back(ad::leaf(fe.parameter(i), params_require_grad));
  }

  const std::vector<ad::Value>& param_leaves() const { return leaves_; }

  ad::Value forward(const ad::Value& x) const { return run(x, 0, fe_->stage_count()); }

  ad::Value to_point(const ad::Value& x, std::size_t point) const {
    check_point(point);
    return run(x, 0, point);
  }

  ad::Value from_point(const ad::Value& h, std::size_t point) const {
    check_point(point);
    return run(h, point, fe_->stage_count());
  }

  // Run both inputs to the chosen point, mix the activations, finish the pass.
  ad::Value manifold_mix_forward(const ad::Value& x_i, const ad::Value& x_j, double lam,
                                 std::size_t layer_index) const {
    check_point(layer_index);
    ad::Value hi = run(x_i, 0, layer_index);
    ad::Value hj = run(x_j, 0, layer_index);
    ad::Value mixed = ad::lincomb(lam, hi, 1.0 - lam, hj);
    return run(mixed, layer_index, fe_->stage_count());
  }

 private:
  void check_point(std::size_t point) const {
    if (point >= fe_->mix_point_count())
      throw ParameterError("layer index " + std::to_string(point) + " out of range; valid 0.." +
                           std::to_string(fe_->mix_point_count() - 1));
  }

  ad::Value run(const ad::Value& h0, std::size_t from, std::size_t to) const {
    if (from == 0) fe_->check_input(h0->val);
    ad::Value h = h0;
    for (std::size_t s = from; s < to; ++s) h = stage(h, s);
    return h;
  }

  ad::Value activation(const ad::Value& h) const {
    return fe_->spec().activation == Activation::relu ? ad::relu(h) : h;
  }

  // Embedding output map. The linear and identity archs stay exactly linear
  // (they exist for the linear-algebra oracles), so only the cnn honors
  // normalize_embedding; linear applies the plain gain.
  ad::Value embed_out(const ad::Value& h) const {
    const auto& spec = fe_->spec();
    if (spec.arch == Arch::small_cnn && spec.normalize_embedding)
      return ad::normalize_rows(h, spec.embed_scale, 1e-12);
    return spec.embed_scale == 1.0 ? h : ad::scale(h, spec.embed_scale);
  }

  ad::Value stage(const ad::Value& h, std::size_t s) const {
    const auto& spec = fe_->spec();
    switch (spec.arch) {
      case Arch::identity:
        return ad::reshape(h, {h->val.dim(0), spec.input_dim()});
      case Arch::linear:
        return embed_out(
            ad::dense(ad::reshape(h, {h->val.dim(0), spec.input_dim()}), leaves_[0], leaves_[1]));
      case Arch::small_cnn:
        switch (s) {
          case 0:
            return ad::avgpool2(activation(ad::conv2d(h, leaves_[0], leaves_[1], 1)));
          case 1:
            return ad::avgpool2(activation(ad::conv2d(h, leaves_[2], leaves_[3], 1)));
          case 2: {
            const std::size_t flat = spec.conv2_channels * (spec.height / 4) * (spec.width / 4);
            return embed_out(
                ad::dense(ad::reshape(h, {h->val.dim(0), flat}), leaves_[4], leaves_[5]));
          }
        }
    }
    throw ParameterError("extractor: bad stage index");
  }

  const FeatureExtractor* fe_;
  std::vector<ad::Value> leaves_;
};

// Evaluation-mode forward: same kernels as the graph path, no gradients.
inline Tensor forward_eval(const FeatureExtractor& fe, const Tensor& x) {
  ModelGraph g(fe, /*params_require_grad=*/false);
  return g.forward(ad::constant(x))->val;
}

inline Tensor manifold_mix_forward_eval(const FeatureExtractor& fe, const Tensor& x_i,
                                        const Tensor& x_j, double lam, std::size_t layer_index) {
  ModelGraph g(fe, false);
  return g.manifold_mix_forward(ad::constant(x_i), ad::constant(x_j), lam, layer_index)->val;
}

// A trained (or in-training) model: extractor parameters plus the frozen
// head, with enough bookkeeping to round-trip through a checkpoint.
struct ModelSnapshot {
  FeatureExtractor extractor;
  OrthogonalHead head;
  std::string config_hash;
  std::string rng_state;
  int epoch = 0;
};

inline Tensor embed_batch(const ModelSnapshot& m, const Tensor& x) {
  return forward_eval(m.extractor, x);
}

// Embeddings for a whole dataset, chunked to bound peak memory.
inline Tensor embed_dataset(const ModelSnapshot& m, const Dataset& ds,
                            std::size_t batch_size = 256) {
  Tensor out({ds.n, m.extractor.embed_dim()});
  const std::size_t D = m.extractor.embed_dim();
  for (std::size_t start = 0; start < ds.n; start += batch_size) {
    const std::size_t b = std::min(batch_size, ds.n - start);
    const Tensor v = embed_batch(m, ds.batch(Dataset::iota_indices(b, start)));
    std::copy_n(v.data(), b * D, out.data() + start * D);
  }
  return out;
}

inline std::vector<int> predict_batch(const ModelSnapshot& m, const Tensor& x) {
  const Tensor s = cosine_scores_batch(m.head, embed_batch(m, x));
  std::vector<int> out(s.dim(0));
  for (std::size_t bi = 0; bi < s.dim(0); ++bi) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.dim(1); ++k)
      if (s.at2(bi, k) > s.at2(bi, best)) best = k;
    out[bi] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy_on(const ModelSnapshot& m, const Tensor& x, const std::vector<int>& y) {
  const auto pred = predict_batch(m, x);
  if (pred.size() != y.size()) throw DimensionError("accuracy_on: label count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
  return y.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(y.size());
}

inline double accuracy(const ModelSnapshot& m, const Dataset& ds, std::size_t batch_size = 256) {
  if (ds.n == 0) throw InputError("accuracy: empty dataset");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < ds.n; start += batch_size) {
    const std::size_t b = std::min(batch_size, ds.n - start);
    const auto idx = Dataset::iota_indices(b, start);
    const auto pred = predict_batch(m, ds.batch(idx));
    for (std::size_t i = 0; i < b; ++i) hits += pred[i] == ds.labels[idx[i]];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.n);
}

}  // namespace dfa
