#include <gtest/gtest.h>

#include "dfa/autodiff.hpp"
#include "dfa/rng.hpp"
#include "dfa/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace dfa;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

void expect_grad_matches(Tensor& storage, const std::function<double()>& eval,
                         const Tensor& analytic, double tol = 2e-6) {
  const Tensor numeric = test::central_diff(storage, eval);
  EXPECT_LT(test::max_rel_err(analytic, numeric), tol)
      << "analytic gradient disagrees with central differences";
}

}  // namespace

TEST(Tensor, ShapeChecks) {
  Tensor a({2, 3});
  Tensor b({3, 2});
  EXPECT_THROW(lincomb(0.5, a, 0.5, b), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(a.reshaped({5}), DimensionError);
  EXPECT_EQ(a.reshaped({3, 2}).dim(0), 3u);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  ad::Value x = ad::leaf(Tensor({2, 2}), true);
  EXPECT_THROW(ad::backward(x), DimensionError);
}

TEST(Autodiff, DenseGradients) {
  Rng rng(11);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({5, 4}, rng);
  Tensor b = random_tensor({5}, rng);

  auto build = [&](bool back) {
    ad::Value vx = ad::leaf(x, true);
    ad::Value vw = ad::leaf(w, true);
    ad::Value vb = ad::leaf(b, true);
    ad::Value loss = ad::mse_all(ad::dense(vx, vw, vb));
    if (back) ad::backward(loss);
    return std::tuple{loss, vx, vw, vb};
  };

  auto [loss, vx, vw, vb] = build(true);
  auto eval = [&] { return ad::scalar_value(std::get<0>(build(false))); };
  expect_grad_matches(x, eval, vx->grad);
  expect_grad_matches(w, eval, vw->grad);
  expect_grad_matches(b, eval, vb->grad);
}

TEST(Autodiff, ConvPoolReluGradients) {
  Rng rng(12);
  Tensor x = random_tensor({2, 2, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);

  auto make = [&](bool back) {
    ad::Value vx = ad::leaf(x, true);
    ad::Value vw = ad::leaf(w, true);
    ad::Value vb = ad::leaf(b, true);
    ad::Value h = ad::avgpool2(ad::relu(ad::conv2d(vx, vw, vb, 1)));
    ad::Value loss = ad::mse_all(h);
    if (back) ad::backward(loss);
    return std::tuple{loss, vx, vw, vb};
  };

  auto [loss, vx, vw, vb] = make(true);
  auto eval = [&] { return ad::scalar_value(std::get<0>(make(false))); };
  expect_grad_matches(x, eval, vx->grad);
  expect_grad_matches(w, eval, vw->grad);
  expect_grad_matches(b, eval, vb->grad);
}

TEST(Autodiff, CosineAndCrossEntropyGradients) {
  Rng rng(13);
  Tensor v = random_tensor({3, 5}, rng, 0.2, 1.0);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor targets({3, 4});
  for (std::size_t i = 0; i < 3; ++i) targets.at2(i, i % 4) = 1.0;

  auto make = [&](bool back) {
    ad::Value vv = ad::leaf(v, true);
    ad::Value loss = ad::ce_with_logits_mean(ad::cosine_scores(vv, w, 1e-12), targets);
    if (back) ad::backward(loss);
    return std::pair{loss, vv};
  };

  auto [loss, vv] = make(true);
  auto eval = [&] { return ad::scalar_value(make(false).first); };
  expect_grad_matches(v, eval, vv->grad);
}

TEST(Autodiff, ReductionGradients) {
  Rng rng(14);
  Tensor x = random_tensor({4, 6}, rng, 0.1, 1.0);

  {
    auto make = [&](bool back) {
      ad::Value vx = ad::leaf(x, true);
      ad::Value loss = ad::mse_all(vx);
      if (back) ad::backward(loss);
      return std::pair{loss, vx};
    };
    auto [loss, vx] = make(true);
    auto eval = [&] { return ad::scalar_value(make(false).first); };
    expect_grad_matches(x, eval, vx->grad);
  }
  {
    auto make = [&](bool back) {
      ad::Value vx = ad::leaf(x, true);
      ad::Value loss = ad::sqrt_norm_rows_mean(vx);
      if (back) ad::backward(loss);
      return std::pair{loss, vx};
    };
    auto [loss, vx] = make(true);
    auto eval = [&] { return ad::scalar_value(make(false).first); };
    expect_grad_matches(x, eval, vx->grad);
  }
}

TEST(Autodiff, MarginAndDistanceGradients) {
  Rng rng(15);
  Tensor s = random_tensor({3, 4}, rng);
  Tensor x = random_tensor({3, 4}, rng, 0.2, 0.8);
  Tensor x0 = random_tensor({3, 4}, rng, 0.2, 0.8);
  const std::vector<int> labels{0, 2, 3};

  {
    auto make = [&](bool back) {
      ad::Value vs = ad::leaf(s, true);
      ad::Value loss = ad::margin_sum(vs, labels, 0.0);
      if (back) ad::backward(loss);
      return std::pair{loss, vs};
    };
    auto [loss, vs] = make(true);
    auto eval = [&] { return ad::scalar_value(make(false).first); };
    expect_grad_matches(s, eval, vs->grad);
  }
  {
    auto make = [&](bool back) {
      ad::Value vx = ad::leaf(x, true);
      ad::Value loss = ad::l2sq_diff_sum(ad::tanh(vx), x0);
      if (back) ad::backward(loss);
      return std::pair{loss, vx};
    };
    auto [loss, vx] = make(true);
    auto eval = [&] { return ad::scalar_value(make(false).first); };
    expect_grad_matches(x, eval, vx->grad);
  }
}

TEST(Autodiff, NormalizeRowsGradient) {
  Rng rng(19);
  Tensor x = random_tensor({3, 5}, rng, 0.2, 1.0);
  Tensor target = random_tensor({3, 5}, rng);
  auto make = [&](bool back) {
    ad::Value vx = ad::leaf(x, true);
    ad::Value loss = ad::l2sq_diff_sum(ad::normalize_rows(vx, 8.0, 1e-12), target);
    if (back) ad::backward(loss);
    return std::pair{loss, vx};
  };
  auto [loss, vx] = make(true);
  auto eval = [&] { return ad::scalar_value(make(false).first); };
  expect_grad_matches(x, eval, vx->grad);
  // rows land on the sphere of the requested radius
  const Tensor y = ad::normalize_rows(ad::constant(x), 8.0, 1e-12)->val;
  for (std::size_t b = 0; b < 3; ++b) {
    double n = 0.0;
    for (std::size_t d = 0; d < 5; ++d) n += y.at2(b, d) * y.at2(b, d);
    EXPECT_NEAR(std::sqrt(n), 8.0, 1e-9);
  }
}

TEST(Autodiff, GatherRowsScattersGradient) {
  Rng rng(16);
  Tensor x = random_tensor({4, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};

  auto make = [&](bool back) {
    ad::Value vx = ad::leaf(x, true);
    ad::Value loss = ad::mse_all(ad::gather_rows(vx, perm));
    if (back) ad::backward(loss);
    return std::pair{loss, vx};
  };
  auto [loss, vx] = make(true);
  auto eval = [&] { return ad::scalar_value(make(false).first); };
  expect_grad_matches(x, eval, vx->grad);
}

// A value feeding two branches must accumulate both contributions.
TEST(Autodiff, DiamondAccumulation) {
  Tensor x({2, 2}, {1.0, -2.0, 3.0, 0.5});
  ad::Value vx = ad::leaf(x, true);
  ad::Value loss = ad::add(ad::mse_all(vx), ad::mse_all(ad::scale(vx, 2.0)));
  ad::backward(loss);
  // d/dx [mean(x^2) + mean(4 x^2)] = 10 x / 4
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(vx->grad[i], 10.0 * x[i] / 4.0, 1e-12);
}

TEST(Autodiff, LincombEndpointsExact) {
  Rng rng(17);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 3}, rng);
  ad::Value va = ad::constant(a);
  ad::Value vb = ad::constant(b);
  const Tensor full = ad::lincomb(1.0, va, 0.0, vb)->val;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(full[i], a[i]);
}

TEST(Autodiff, CeRejectsNonProbabilityTargets) {
  Tensor s({1, 3}, {0.1, 0.2, 0.3});
  Tensor t({1, 3}, {0.5, 0.2, 0.1});  // sums to 0.8
  EXPECT_THROW(ad::ce_with_logits_mean(ad::constant(s), t), InputError);
}
