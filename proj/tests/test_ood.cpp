#include <gtest/gtest.h>

#include <cmath>

#include "dfa/metrics.hpp"
#include "dfa/ood.hpp"
#include "support/oracles.hpp"
#include "support/test_data.hpp"

using namespace dfa;

namespace {

constexpr double kPi2 = 1.5707963267948966;

// Identity-extractor datasets let tests choose embeddings directly.
Dataset embedding_dataset(std::vector<std::vector<double>> rows, std::vector<int> labels,
                          std::size_t n_classes) {
  const std::size_t d = rows[0].size();
  return test::raw_dataset(1, 1, d, std::move(rows), std::move(labels), n_classes);
}

}  // namespace

TEST(ComputePrototypes, RankOneClassRecoversDirection) {
  const ModelSnapshot m = test::identity_snapshot(1, 1, 3, 2);
  const std::vector<double> u{0.6, 0.3, 0.9};
  // class 0: scaled copies of u; class 1: anything nonzero
  const Dataset ds = embedding_dataset(
      {{0.6, 0.3, 0.9}, {1.2, 0.6, 1.8}, {0.3, 0.15, 0.45}, {0.1, 0.9, 0.2}}, {0, 0, 0, 1}, 2);
  const ClassPrototypeSet protos = compute_prototypes(m, ds);
  double un = 0.0, dot_ = 0.0;
  for (double x : u) un += x * x;
  un = std::sqrt(un);
  for (std::size_t j = 0; j < 3; ++j) dot_ += protos.prototypes.at2(0, j) * u[j] / un;
  EXPECT_GE(std::fabs(dot_), 1.0 - 1e-9);
  EXPECT_EQ(protos.class_counts[0], 3u);
}

// Near-rank-1 embeddings: implementation must agree with the independent
// power-iteration oracle and stay close to the planted direction.
TEST(ComputePrototypes, MatchesPowerIterationOracle) {
  Rng rng(11);
  const std::size_t d = 6;
  const ModelSnapshot m = test::identity_snapshot(1, 1, d, 2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> u(d);
    for (auto& x : u) x = rng.uniform(-1.0, 1.0);
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    Tensor cls0({8, d});
    for (int s = 0; s < 8; ++s) {
      std::vector<double> row(d);
      const double a = rng.uniform(0.5, 1.5);
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = a * u[j] + rng.normal(0.0, 1e-4);
        cls0.at2(s, j) = row[j];
      }
      rows.push_back(row);
      labels.push_back(0);
    }
    rows.push_back(std::vector<double>(d, 0.5));
    labels.push_back(1);

    const ClassPrototypeSet protos = compute_prototypes(m, embedding_dataset(rows, labels, 2));
    const std::vector<double> oracle = test::power_iteration_top_singular(cls0);

    double dot_ = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot_ += protos.prototypes.at2(0, j) * oracle[j];
    ASSERT_GE(std::fabs(dot_), 1.0 - 1e-6);

    double un = 0.0, du = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(un);
    for (std::size_t j = 0; j < d; ++j) du += protos.prototypes.at2(0, j) * u[j] / un;
    ASSERT_GE(std::fabs(du), 1.0 - 1e-3);
  }
}

TEST(ComputePrototypes, SignFlipLeavesScoresUnchanged) {
  const std::size_t d = 4;
  const ModelSnapshot m = test::identity_snapshot(1, 1, d, 2);
  std::vector<std::vector<double>> rows{{0.4, 0.1, 0.2, 0.3}, {0.8, 0.2, 0.4, 0.6},
                                        {0.1, 0.5, 0.1, 0.9}, {0.2, 1.0, 0.2, 1.8}};
  const Dataset ds = embedding_dataset(rows, {0, 0, 1, 1}, 2);
  std::vector<std::vector<double>> negated = rows;
  for (auto& r : {0, 1})
    for (std::size_t j = 0; j < d; ++j) negated[r][j] = -negated[r][j];
  const Dataset ds_neg = embedding_dataset(negated, {0, 0, 1, 1}, 2);

  const ClassPrototypeSet pa = compute_prototypes(m, ds);
  const ClassPrototypeSet pb = compute_prototypes(m, ds_neg);

  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    ASSERT_NEAR(ood_score_embedding(pa, v.data(), d), ood_score_embedding(pb, v.data(), d), 1e-12);
  }
}

TEST(ComputePrototypes, EmptyClassNamedInError) {
  const ModelSnapshot m = test::identity_snapshot(1, 1, 4, 3);
  const Dataset ds = embedding_dataset({{0.1, 0.2, 0.1, 0.4}, {0.3, 0.4, 0.2, 0.1}}, {0, 1}, 3);
  try {
    compute_prototypes(m, ds);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos);
  }
}

TEST(OodScore, AngleEndpoints) {
  ClassPrototypeSet protos;
  protos.prototypes = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const std::vector<double> parallel{3.0, 0.0};
  EXPECT_EQ(ood_score_embedding(protos, parallel.data(), 2), 0.0);
  ClassPrototypeSet single;
  single.prototypes = Tensor({1, 2}, {1.0, 0.0});
  const std::vector<double> ortho{0.0, 2.0};
  EXPECT_DOUBLE_EQ(ood_score_embedding(single, ortho.data(), 2), kPi2);
  const std::vector<double> diag{1.0, 1.0};
  EXPECT_NEAR(ood_score_embedding(protos, diag.data(), 2), 0.7853981633974483, 1e-12);
}

TEST(OodScore, ZeroNormRejected) {
  ClassPrototypeSet protos;
  protos.prototypes = Tensor({1, 2}, {1.0, 0.0});
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_THROW(ood_score_embedding(protos, zero.data(), 2), DegenerateInputError);
}

TEST(OodScoreProperty, RangeAndScaleInvariance) {
  Rng rng(14);
  ClassPrototypeSet protos;
  protos.prototypes = Tensor({3, 5});
  for (std::size_t k = 0; k < 3; ++k) {
    double n = 0.0;
    std::vector<double> row(5);
    for (auto& x : row) {
      x = rng.normal();
      n += x * x;
    }
    n = std::sqrt(n);
    for (std::size_t j = 0; j < 5; ++j) protos.prototypes.at2(k, j) = row[j] / n;
  }
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(5);
    for (auto& x : v) x = rng.normal();
    const double phi = ood_score_embedding(protos, v.data(), 5);
    ASSERT_GE(phi, 0.0);
    ASSERT_LE(phi, kPi2);
    std::vector<double> scaled(5);
    for (std::size_t j = 0; j < 5; ++j) scaled[j] = 37.5 * v[j];
    ASSERT_NEAR(ood_score_embedding(protos, scaled.data(), 5), phi, 1e-12);
  }
}

TEST(F1Sweep, PerfectSeparationGivesOne) {
  const std::vector<double> scores{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> is_id{1, 1, 0, 0};
  const SweepResult r = f1_sweep(scores, is_id);
  EXPECT_DOUBLE_EQ(r.best_f1, 1.0);
  EXPECT_GT(r.best_threshold, 0.2);
  EXPECT_LT(r.best_threshold, 0.8);
}

// The worked four-sample instance: best F1 = 0.8 anywhere in (0.2, 0.9).
TEST(F1Sweep, WorkedExample) {
  const std::vector<double> scores{0.1, 0.2, 0.15, 0.9};
  const std::vector<int> is_id{1, 1, 0, 0};
  const SweepResult r = f1_sweep(scores, is_id);
  EXPECT_DOUBLE_EQ(r.best_f1, 0.8);
  EXPECT_GT(r.best_threshold, 0.2);
  EXPECT_LT(r.best_threshold, 0.9);
  const auto oracle = test::brute_force_f1(scores, is_id);
  EXPECT_EQ(r.best_f1, oracle.best_f1);
}

TEST(F1Sweep, AllScoresIdentical) {
  const std::vector<double> scores{0.4, 0.4, 0.4, 0.4, 0.4};
  const std::vector<int> is_id{1, 1, 1, 0, 0};
  const SweepResult r = f1_sweep(scores, is_id);
  // only all-ID or none-ID predictions exist; all-ID gives 2p/(p+1)
  EXPECT_DOUBLE_EQ(r.best_f1, 0.75);
}

TEST(F1Sweep, SingleClassRejected) {
  EXPECT_THROW(f1_sweep({0.1, 0.2}, {1, 1}), MetricError);
  EXPECT_THROW(f1_sweep({0.1, 0.2}, {0, 0}), MetricError);
}

// Exhaustive-oracle equality on random instances.
TEST(F1SweepProperty, MatchesBruteForceExactly) {
  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.index(63);
    std::vector<double> scores(n);
    std::vector<int> is_id(n);
    bool saw0 = false, saw1 = false;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = std::round(rng.uniform(0.0, kPi2) * 16.0) / 16.0;  // force ties
      is_id[i] = rng.uniform() < 0.5 ? 1 : 0;
      (is_id[i] ? saw1 : saw0) = true;
    }
    if (!saw0) is_id[0] = 0;
    if (!saw1) is_id[n - 1] = 1;
    const SweepResult r = f1_sweep(scores, is_id);
    const auto oracle = test::brute_force_f1(scores, is_id);
    ASSERT_EQ(r.best_f1, oracle.best_f1);
    ASSERT_EQ(f1_at_threshold(scores, is_id, r.best_threshold), r.best_f1);
  }
}

// Duplicating an ID sample and re-sweeping can never undershoot the old best
// threshold's F1 on the augmented set.
TEST(F1SweepProperty, MonotoneContainment) {
  Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 4 + rng.index(40);
    std::vector<double> scores(n);
    std::vector<int> is_id(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = rng.uniform(0.0, kPi2);
      is_id[i] = rng.uniform() < 0.6 ? 1 : 0;
    }
    is_id[0] = 1;
    is_id[1] = 0;
    const SweepResult before = f1_sweep(scores, is_id);

    std::size_t pick = 0;
    while (!is_id[pick]) pick = rng.index(n);
    std::vector<double> scores2 = scores;
    std::vector<int> is_id2 = is_id;
    scores2.push_back(scores[pick]);
    is_id2.push_back(1);

    const SweepResult after = f1_sweep(scores2, is_id2);
    ASSERT_GE(after.best_f1, f1_at_threshold(scores2, is_id2, before.best_threshold) - 1e-15);
  }
}

TEST(EvaluateOod, ExchangeableScoresHitAllPositiveBound) {
  const std::size_t d = 4;
  const ModelSnapshot m = test::identity_snapshot(1, 1, d, 2);
  SynthSpec spec;
  spec.n_classes = 2;
  spec.per_class = 30;
  spec.height = 1;
  spec.width = d;
  spec.seed = 61;
  const Dataset ds = make_synthetic(spec);
  const OODReport r = evaluate_ood(m, ds, ds);  // OOD set == ID set
  EXPECT_NEAR(r.best_f1, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.best_f1, 2.0 * 0.5 / (0.5 + 1.0), 0.05);
}

TEST(EvaluateOod, OrthogonalOodSeparatesPerfectly) {
  const std::size_t d = 4;
  const ModelSnapshot m = test::identity_snapshot(1, 1, d, 2);
  // ID classes live in dims {0,1}; OOD samples live in dims {2,3}
  const Dataset id_ds = embedding_dataset(
      {{0.9, 0.0, 0.0, 0.0}, {0.5, 0.0, 0.0, 0.0}, {0.0, 0.8, 0.0, 0.0}, {0.0, 0.4, 0.0, 0.0}},
      {0, 0, 1, 1}, 2);
  const Dataset ood_ds = embedding_dataset(
      {{0.0, 0.0, 0.7, 0.1}, {0.0, 0.0, 0.2, 0.9}, {0.0, 0.0, 0.5, 0.5}}, {0, 0, 0}, 1);
  const OODReport r = evaluate_ood(m, id_ds, ood_ds);
  EXPECT_DOUBLE_EQ(r.best_f1, 1.0);
}

TEST(EvaluateOod, ReportRoundTripsThroughMetrics) {
  const std::string path = testing::TempDir() + "/ood_roundtrip.jsonl";
  std::remove(path.c_str());
  MetricsWriter w(path, "cafe");
  nlohmann::json d;
  d["best_f1"] = 0.8437509999123;
  d["best_threshold"] = 0.1234567890123456;
  d["n_id"] = 42;
  d["n_ood"] = 17;
  w.append("ood", d);
  const auto records = read_metrics(path);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].kind, "ood");
  EXPECT_EQ(records[0].data["best_f1"].get<double>(), 0.8437509999123);
  EXPECT_EQ(records[0].data["best_threshold"].get<double>(), 0.1234567890123456);
  EXPECT_EQ(records[0].data["n_id"].get<int>(), 42);
}
