// Apache License, Version 2.0, refer to LICENSE.txt

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "effectfuse/partition.hpp"
#include "effectfuse/rng.hpp"

using namespace effectfuse;
using Catch::Matchers::WithinAbs;

TEST_CASE("partitions canonicalize to restricted growth strings") {
  // labels (0,2,2,5) -> blocks appear in order of first member
  const LevelPartition p("x", {0, 2, 2, 5});
  REQUIRE(p.assignment() == std::vector<int>{0, 1, 1, 2});
  REQUIRE(p.block_count() == 3);
  REQUIRE(p.blocks() == std::vector<std::vector<int>>{{0}, {1, 2}, {3}});
}

TEST_CASE("relabeling the components does not change the partition") {
  const LevelPartition a("x", {1, 1, 3, 1});
  const LevelPartition b("x", {3, 3, 1, 3});
  const LevelPartition c("x", {7, 7, 2, 7});
  REQUIRE(a == b);
  REQUIRE(a == c);
  const LevelPartition d("x", {1, 1, 3, 3});
  REQUIRE(!(a == d));
}

TEST_CASE("draw partitions pin the baseline to the spike") {
  // effects on components (2,2,5): baseline stays alone
  REQUIRE(draw_partition("x", {2, 2, 5}).assignment() ==
          std::vector<int>{0, 1, 1, 2});
  // spike allocations fuse with the baseline
  REQUIRE(draw_partition("x", {0, 3, 0}).assignment() ==
          std::vector<int>{0, 0, 1, 0});
  // all in the spike: a single block
  const LevelPartition all_zero = draw_partition("x", {0, 0, 0});
  REQUIRE(all_zero.block_count() == 1);
  REQUIRE(all_zero.zero_block() == std::vector<int>{0, 1, 2, 3});
  // same non-zero component != spike: two blocks
  REQUIRE(draw_partition("x", {1, 1}).assignment() == std::vector<int>{0, 1, 1});
  REQUIRE_THROWS_AS(draw_partition("x", {-1, 0}), DataError);
}

TEST_CASE("partitions order and compare by canonical form") {
  const LevelPartition fused("x", {0, 0, 0});
  const LevelPartition split("x", {0, 1, 2});
  REQUIRE(fused < split);
  REQUIRE(!(split < fused));
}

TEST_CASE("from_blocks validates a partition") {
  const LevelPartition p =
      LevelPartition::from_blocks("x", 4, {{0, 2}, {1, 3}});
  REQUIRE(p.assignment() == std::vector<int>{0, 1, 0, 1});
  REQUIRE_THROWS_AS(LevelPartition::from_blocks("x", 4, {{0, 1}, {1, 2, 3}}),
                    DataError);  // overlap
  REQUIRE_THROWS_AS(LevelPartition::from_blocks("x", 4, {{0, 1}, {3}}),
                    DataError);  // element 2 missing
  REQUIRE_THROWS_AS(LevelPartition::from_blocks("x", 4, {{0, 1, 2}, {4}}),
                    DataError);  // out of range
}

TEST_CASE("co-clustering counts pairs over the extended elements") {
  AllocMatrix trace(2, 3);
  trace << 1, 2, 1,
           0, 1, 1;
  const Eigen::MatrixXd C = accumulate_cocluster(trace);
  REQUIRE(C.rows() == 4);
  REQUIRE(C.isApprox(C.transpose()));
  for (int g = 0; g < 4; ++g) REQUIRE(C(g, g) == 1.0);
  // draw 1 extends to (0,1,2,1): pair (1,3) together
  // draw 2 extends to (0,0,1,1): pairs (0,1) and (2,3) together
  REQUIRE(C(0, 1) == 0.5);
  REQUIRE(C(1, 3) == 0.5);
  REQUIRE(C(2, 3) == 0.5);
  REQUIRE(C(0, 2) == 0.0);
  REQUIRE(C(0, 3) == 0.0);
  REQUIRE(C(1, 2) == 0.0);
}

TEST_CASE("co-clustering entries stay in the unit interval") {
  Rng rng(3);
  AllocMatrix trace(50, 6);
  for (int r = 0; r < 50; ++r)
    for (int k = 0; k < 6; ++k)
      trace(r, k) = static_cast<std::uint16_t>(rng.uniform() * 7);
  const Eigen::MatrixXd C = accumulate_cocluster(trace);
  REQUIRE(C.minCoeff() >= 0.0);
  REQUIRE(C.maxCoeff() <= 1.0);
  REQUIRE(C.isApprox(C.transpose()));
  REQUIRE(C.diagonal().isOnes());
}

TEST_CASE("most frequent partition counts canonical forms") {
  // rows (1,1) and (2,2) induce the same partition; (0,0) a different one
  AllocMatrix trace(5, 2);
  trace << 1, 1,
           2, 2,
           0, 0,
           1, 1,
           0, 0;
  const MostFrequentResult r = most_frequent_partition(trace, "x");
  REQUIRE(r.frequency == 3);
  REQUIRE(!r.tied);
  REQUIRE(r.partition.assignment() == std::vector<int>{0, 1, 1});
}

TEST_CASE("most frequent partition flags ties toward the smaller string") {
  AllocMatrix trace(4, 2);
  trace << 0, 0,
           1, 2,
           0, 0,
           2, 1;
  const MostFrequentResult r = most_frequent_partition(trace, "x");
  REQUIRE(r.tied);
  REQUIRE(r.frequency == 2);
  REQUIRE(r.partition.assignment() == std::vector<int>{0, 0, 0});
}

namespace {

Eigen::MatrixXd line_distances(const std::vector<double>& pos) {
  const int n = static_cast<int>(pos.size());
  Eigen::MatrixXd D(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) D(i, j) = std::abs(pos[i] - pos[j]);
  return D;
}

double brute_force_pam_cost(const Eigen::MatrixXd& D, int k) {
  const int n = static_cast<int>(D.rows());
  std::vector<int> pick(k);
  double best = std::numeric_limits<double>::infinity();
  // enumerate all k-subsets of {0..n-1}
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    double cost = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = std::numeric_limits<double>::infinity();
      for (int m : idx) d = std::min(d, D(j, m));
      cost += d;
    }
    best = std::min(best, cost);
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
  return best;
}

}  // namespace

TEST_CASE("pam finds the optimum on every small instance") {
  Rng rng(41);
  for (int instance = 0; instance < 60; ++instance) {
    const int n = 4 + static_cast<int>(rng.uniform() * 5);  // 4..8
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    if (instance % 2 == 0) {
      // points on a line
      std::vector<double> pos(n);
      for (int i = 0; i < n; ++i) pos[i] = rng.uniform() * 10.0;
      D = line_distances(pos);
    } else {
      // symmetric dissimilarities without metric structure
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) D(i, j) = D(j, i) = rng.uniform();
    }
    for (int k = 1; k <= std::min(4, n); ++k) {
      const PamResult res = pam(D, k);
      REQUIRE(static_cast<int>(res.medoids.size()) == k);
      REQUIRE_THAT(res.cost, WithinAbs(brute_force_pam_cost(D, k), 1e-9));
    }
  }
}

TEST_CASE("pam handles duplicate points without emptying a cluster") {
  // two exact duplicates force a zero-distance pair of medoids at k = 3
  const Eigen::MatrixXd D = line_distances({0.0, 0.0, 5.0, 9.0});
  const PamResult res = pam(D, 3);
  std::vector<int> seen;
  for (int m : res.medoids) {
    REQUIRE(res.assignment[m] == m);  // a medoid belongs to itself
    seen.push_back(m);
  }
  // every medoid keeps at least its own member: k clusters survive
  std::map<int, int> sizes;
  for (int a : res.assignment) sizes[a] += 1;
  REQUIRE(sizes.size() == 3);
}

TEST_CASE("pam validates its inputs") {
  const Eigen::MatrixXd D = line_distances({0.0, 1.0, 2.0});
  REQUIRE_THROWS_AS(pam(D, 0), DataError);
  REQUIRE_THROWS_AS(pam(D, 4), DataError);
  REQUIRE_THROWS_AS(pam(Eigen::MatrixXd::Zero(2, 3), 1), DataError);
}

TEST_CASE("silhouette, worked example") {
  // line positions (0, 0.1, 1.0, 1.2), clusters {0,1} and {2,3}:
  //   s0 = 10/11, s1 = 9/10, s2 = 15/19, s3 = 19/23.
  const Eigen::MatrixXd D = line_distances({0.0, 0.1, 1.0, 1.2});
  const double s = silhouette(D, {0, 0, 2, 2});
  const double expected = (10.0 / 11.0 + 9.0 / 10.0 + 15.0 / 19.0 + 19.0 / 23.0) / 4.0;
  REQUIRE_THAT(s, WithinAbs(expected, 1e-12));
}

TEST_CASE("silhouette gives singletons a zero score") {
  // clusters {0,1} and {2}: s2 = 0 by convention;
  // s0 = (d(0,2) - d(0,1)) / d(0,2) = (3 - 1) / 3, s1 = (2 - 1) / 2.
  const Eigen::MatrixXd D = line_distances({0.0, 1.0, 3.0});
  const double s = silhouette(D, {0, 0, 1});
  REQUIRE_THAT(s, WithinAbs((2.0 / 3.0 + 0.5 + 0.0) / 3.0, 1e-12));
}

TEST_CASE("silhouette stays within [-1, 1] and rejects one cluster") {
  Rng rng(7);
  for (int instance = 0; instance < 40; ++instance) {
    const int n = 3 + static_cast<int>(rng.uniform() * 6);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) D(i, j) = D(j, i) = rng.uniform();
    std::vector<int> assignment(n);
    for (int i = 0; i < n; ++i) assignment[i] = static_cast<int>(rng.uniform() * 3);
    if (std::set<int>(assignment.begin(), assignment.end()).size() < 2)
      assignment[0] = assignment[0] == 0 ? 1 : 0;
    const double s = silhouette(D, assignment);
    REQUIRE(s >= -1.0);
    REQUIRE(s <= 1.0);
  }
  const Eigen::MatrixXd D = line_distances({0.0, 1.0, 2.0});
  REQUIRE_THROWS_AS(silhouette(D, {1, 1, 1}), DataError);
}

TEST_CASE("silhouette of identical points is zero, not NaN") {
  const Eigen::MatrixXd D = Eigen::MatrixXd::Zero(4, 4);
  REQUIRE(silhouette(D, {0, 0, 1, 1}) == 0.0);
}

TEST_CASE("similarity-based selection recovers a planted grouping") {
  // blocks {0,1,2}, {3,4}, {5}: within-pair similarity high, across low
  const std::vector<int> truth{0, 0, 0, 1, 1, 2};
  const int n = 6;
  Eigen::MatrixXd C(n, n);
  Rng rng(19);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      const double base = truth[i] == truth[j] ? 0.93 : 0.06;
      C(i, j) = C(j, i) = i == j ? 1.0 : base + 0.04 * (rng.uniform() - 0.5);
    }
  const PamSelectionResult sel = select_by_pam(C, "x");
  REQUIRE(sel.k == 3);
  REQUIRE(!sel.one_cluster_suspected);
  REQUIRE(sel.partition == LevelPartition("x", truth));
  REQUIRE(sel.silhouette_by_k.size() == 5);  // k = 2..6
  REQUIRE_THAT(sel.silhouette_by_k[1], WithinAbs(sel.silhouette, 1e-15));
}

TEST_CASE("an always-fused similarity matrix flags one-cluster suspicion") {
  const Eigen::MatrixXd C = Eigen::MatrixXd::Ones(5, 5);
  const PamSelectionResult sel = select_by_pam(C, "x");
  REQUIRE(sel.one_cluster_suspected);
  REQUIRE(sel.silhouette <= 0.0);
}

TEST_CASE("selection respects k_max and input checks") {
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(8, 8);
  const PamSelectionResult sel = select_by_pam(C, "x", 4);
  REQUIRE(sel.silhouette_by_k.size() == 3);  // k = 2..4
  REQUIRE_THROWS_AS(select_by_pam(Eigen::MatrixXd::Ones(1, 1), "x"), DataError);
  REQUIRE_THROWS_AS(select_by_pam(C, "x", 1), ConfigError);
  REQUIRE_THROWS_AS(select_by_pam(Eigen::MatrixXd::Ones(2, 3), "x"), DataError);
}

TEST_CASE("selection ties prefer fewer clusters") {
  // two perfectly separated pairs: k = 2 and higher k all score <= k = 2
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(4, 4);
  C(0, 1) = C(1, 0) = 1.0;
  C(2, 3) = C(3, 2) = 1.0;
  C.diagonal().setOnes();
  const PamSelectionResult sel = select_by_pam(C, "x");
  REQUIRE(sel.k == 2);
  REQUIRE(sel.partition == LevelPartition("x", {0, 0, 1, 1}));
}
