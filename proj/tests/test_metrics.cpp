// Apache License, Version 2.0, refer to LICENSE.txt

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <vector>

#include "effectfuse/data_model.hpp"
#include "effectfuse/metrics.hpp"
#include "effectfuse/rng.hpp"

using namespace effectfuse;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<int> random_labels(Rng& rng, int n, int max_labels) {
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i)
    labels[i] = static_cast<int>(rng.uniform() * max_labels);
  return labels;
}

}  // namespace

TEST_CASE("adjusted Rand index is one for identical partitions") {
  Rng rng(11);
  for (int instance = 0; instance < 20; ++instance) {
    const LevelPartition p("x", random_labels(rng, 12, 4));
    REQUIRE_THAT(adjusted_rand(p, p), WithinAbs(1.0, 1e-12));
  }
  // degenerate denominators still compare equal partitions
  const LevelPartition fused("x", {0, 0, 0, 0});
  const LevelPartition split("x", {0, 1, 2, 3});
  REQUIRE(adjusted_rand(fused, fused) == 1.0);
  REQUIRE(adjusted_rand(split, split) == 1.0);
}

TEST_CASE("adjusted Rand index, worked example") {
  // truth {0,1}{2,3}{4} vs estimate {0,1}{2}{3,4}:
  //   sum_cells = 1, sum_a = sum_b = 2, expected = 0.4 -> (1 - 0.4) / 1.6
  const LevelPartition truth("x", {0, 0, 1, 1, 2});
  const LevelPartition estimate("x", {0, 0, 1, 2, 2});
  REQUIRE_THAT(adjusted_rand(truth, estimate), WithinAbs(0.375, 1e-12));
  REQUIRE_THAT(adjusted_rand(estimate, truth), WithinAbs(0.375, 1e-12));
}

TEST_CASE("adjusted Rand index centers at zero under random matching") {
  // fixed truth, estimates drawn by shuffling fixed block sizes: the
  // permutation model gives E[ARI] = 0
  std::vector<int> truth_labels(60), est_labels(60);
  for (int i = 0; i < 60; ++i) {
    truth_labels[i] = i / 20;          // sizes 20/20/20
    est_labels[i] = i < 30 ? 0 : (i < 50 ? 1 : 2);  // sizes 30/20/10
  }
  const LevelPartition truth("x", truth_labels);
  Rng rng(23);
  double mean = 0.0;
  const int draws = 2000;
  for (int d = 0; d < draws; ++d) {
    for (int i = 59; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform() * (i + 1));
      std::swap(est_labels[i], est_labels[j]);
    }
    mean += adjusted_rand(truth, LevelPartition("x", est_labels));
  }
  mean /= draws;
  REQUIRE_THAT(mean, WithinAbs(0.0, 0.01));
}

TEST_CASE("assignment matching is optimal, not greedy") {
  // greedy row-wise matching picks 1 + 4 = 5; the optimum is 2 + 2 = 4
  Eigen::MatrixXd cost(2, 2);
  cost << 1, 2,
          2, 4;
  REQUIRE_THAT(detail::hungarian_min_cost(cost), WithinAbs(4.0, 1e-12));
  Eigen::MatrixXd rect(2, 3);
  rect << 5, 4, 1,
          2, 3, 6;
  REQUIRE_THAT(detail::hungarian_min_cost(rect), WithinAbs(3.0, 1e-12));
}

namespace {

// agreement by exhaustive search over injective block matchings
double brute_force_agreement(const std::vector<int>& truth,
                             const std::vector<int>& est) {
  const int n = static_cast<int>(truth.size());
  const int r = 1 + *std::max_element(truth.begin(), truth.end());
  const int c = 1 + *std::max_element(est.begin(), est.end());
  const int m = std::max(r, c);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < n; ++i) table(truth[i], est[i]) += 1.0;
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    double agree = 0.0;
    for (int i = 0; i < m; ++i) agree += table(i, perm[i]);
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("misclassification rate matches an exhaustive matching oracle") {
  Rng rng(31);
  for (int instance = 0; instance < 120; ++instance) {
    const int n = 5 + static_cast<int>(rng.uniform() * 8);
    // raw labels, then canonicalized through LevelPartition
    const std::vector<int> t_raw = random_labels(rng, n, 5);
    const std::vector<int> e_raw = random_labels(rng, n, 5);
    const LevelPartition truth("x", t_raw);
    const LevelPartition estimate("x", e_raw);
    const double expected =
        (n - brute_force_agreement(truth.assignment(), estimate.assignment())) / n;
    REQUIRE_THAT(error_rate(truth, estimate), WithinAbs(expected, 1e-12));
  }
}

TEST_CASE("misclassification rate, edges") {
  const LevelPartition truth("x", {0, 0, 1, 1});
  REQUIRE(error_rate(truth, truth) == 0.0);
  // estimate splits one element off: one mistake in four
  REQUIRE_THAT(error_rate(truth, LevelPartition("x", {0, 0, 1, 2})),
               WithinAbs(0.25, 1e-12));
  // more estimated than true blocks exercises the transposed direction
  REQUIRE_THAT(error_rate(LevelPartition("x", {0, 0, 0, 0}),
                          LevelPartition("x", {0, 1, 2, 3})),
               WithinAbs(0.75, 1e-12));
  REQUIRE_THROWS_AS(error_rate(truth, LevelPartition("x", {0, 0, 1})), DataError);
}

TEST_CASE("pair confusion, worked example") {
  // truth {0,1}{2}, estimate {0}{1,2}:
  //   (0,1) fused in truth, split -> fp; (0,2) split both -> tp;
  //   (1,2) split in truth, fused -> fn
  const PairConfusion pc =
      pair_confusion(LevelPartition("x", {0, 0, 1}), LevelPartition("x", {0, 1, 1}));
  REQUIRE(pc.tp == 1);
  REQUIRE(pc.fp == 1);
  REQUIRE(pc.tn == 0);
  REQUIRE(pc.fn == 1);
  REQUIRE(pc.fnr.has_value());
  REQUIRE_THAT(*pc.fnr, WithinAbs(0.5, 1e-12));
  REQUIRE(pc.fpr.has_value());
  REQUIRE_THAT(*pc.fpr, WithinAbs(1.0, 1e-12));
}

TEST_CASE("pair counts always partition the set of pairs") {
  Rng rng(43);
  for (int instance = 0; instance < 60; ++instance) {
    const int n = 3 + static_cast<int>(rng.uniform() * 10);
    const PairConfusion pc = pair_confusion(LevelPartition("x", random_labels(rng, n, 4)),
                                            LevelPartition("x", random_labels(rng, n, 4)));
    REQUIRE(pc.pair_count() == static_cast<long>(n) * (n - 1) / 2);
  }
}

TEST_CASE("rates go undefined when the truth has no pairs of that kind") {
  // all fused: no separated pair exists, so the false negative rate is moot
  const PairConfusion all_fused =
      pair_confusion(LevelPartition("x", {0, 0, 0}), LevelPartition("x", {0, 1, 2}));
  REQUIRE(!all_fused.fnr.has_value());
  REQUIRE(all_fused.fpr.has_value());
  REQUIRE_THAT(*all_fused.fpr, WithinAbs(1.0, 1e-12));
  // all singletons: no fused pair exists, so the false positive rate is moot
  const PairConfusion all_split =
      pair_confusion(LevelPartition("x", {0, 1, 2}), LevelPartition("x", {0, 0, 0}));
  REQUIRE(!all_split.fpr.has_value());
  REQUIRE(all_split.fnr.has_value());
  REQUIRE_THAT(*all_split.fnr, WithinAbs(1.0, 1e-12));
  // perfect estimate keeps both rates at zero when defined
  const PairConfusion perfect =
      pair_confusion(LevelPartition("x", {0, 0, 1}), LevelPartition("x", {0, 0, 1}));
  REQUIRE_THAT(*perfect.fnr, WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(*perfect.fpr, WithinAbs(0.0, 1e-12));
}

namespace {

DesignMatrix small_design() {
  Dataset data;
  data.response = Eigen::VectorXd::Zero(6);
  CategoricalCovariate color;
  color.name = "color";
  color.levels = {"r", "g", "b"};
  color.codes = {0, 1, 2, 0, 1, 2};
  data.categorical.push_back(color);
  ContinuousCovariate weight;
  weight.name = "weight";
  weight.values = Eigen::VectorXd::LinSpaced(6, 0.0, 5.0);
  data.continuous.push_back(weight);
  return build_design(data);
}

}  // namespace

TEST_CASE("estimation error covers the intercept and categorical effects only") {
  const DesignMatrix dm = small_design();
  // columns: intercept, color:g, color:b, weight
  Eigen::VectorXd truth(4), estimate(4);
  truth << 1.0, 2.0, 3.0, 4.0;
  estimate << 1.1, 1.8, 3.3, 11.0;  // continuous error must not count
  const double expected = (0.01 + 0.04 + 0.09) / 3.0;
  REQUIRE_THAT(mse(estimate, truth, dm.layout), WithinAbs(expected, 1e-12));
  REQUIRE(mse(truth, truth, dm.layout) == 0.0);
  Eigen::VectorXd short_vec(3);
  REQUIRE_THROWS_AS(mse(short_vec, truth, dm.layout), DataError);
}

TEST_CASE("prediction error matches a direct loop") {
  Eigen::MatrixXd X(3, 2);
  X << 1, 0,
       1, 1,
       1, 2;
  Eigen::VectorXd y(3), coef(2);
  y << 0.5, 2.0, 3.0;
  coef << 0.4, 1.2;
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double fit = X(i, 0) * coef[0] + X(i, 1) * coef[1];
    expected += (y[i] - fit) * (y[i] - fit);
  }
  expected /= 3.0;
  REQUIRE_THAT(mspe(X, y, coef), WithinAbs(expected, 1e-12));
  REQUIRE_THROWS_AS(mspe(X, Eigen::VectorXd::Zero(2), coef), DataError);
  REQUIRE_THROWS_AS(mspe(X, y, Eigen::VectorXd::Zero(3)), DataError);
  REQUIRE_THROWS_AS(mspe(Eigen::MatrixXd::Zero(0, 2), Eigen::VectorXd::Zero(0), coef),
                    DataError);
}
