// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"
#include "effectfuse/partition.hpp"

namespace effectfuse {

namespace detail {

// Contingency table between two partitions of the same elements.
inline Eigen::MatrixXd contingency(const LevelPartition& a, const LevelPartition& b) {
  if (a.element_count() != b.element_count())
    throw DataError("partitions cover different element counts");
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(a.block_count(), b.block_count());
  for (int e = 0; e < a.element_count(); ++e)
    table(a.assignment()[e], b.assignment()[e]) += 1.0;
  return table;
}

// Minimum cost assignment (Kuhn-Munkres with potentials); cost must have
// rows <= cols. Quadratic sizes here are tiny, cubic time is fine.
inline double hungarian_min_cost(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) total += cost(p[j] - 1, j - 1);
  return total;
}

}  // namespace detail

// Adjusted Rand index between two partitions; 1 for identical partitions,
// around 0 for independent ones. The degenerate denominator (both partitions
// all-singletons or both one block) compares equal partitions, hence 1.
inline double adjusted_rand(const LevelPartition& truth, const LevelPartition& estimate) {
  const Eigen::MatrixXd table = detail::contingency(truth, estimate);
  auto choose2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double sum_cells = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cells += choose2(table(i, j));
  double sum_a = 0.0, sum_b = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_a += choose2(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_b += choose2(table.col(j).sum());
  const double total = choose2(static_cast<double>(truth.element_count()));
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double denom = 0.5 * (sum_a + sum_b) - expected;
  if (denom == 0.0) return 1.0;
  return (sum_cells - expected) / denom;
}

// Share of elements landing in the wrong block after the estimated blocks are
// matched one-to-one to the true blocks with maximal overlap.
inline double error_rate(const LevelPartition& truth, const LevelPartition& estimate) {
  Eigen::MatrixXd overlap = detail::contingency(truth, estimate);
  if (overlap.rows() > overlap.cols()) overlap.transposeInPlace();
  const double agreement = -detail::hungarian_min_cost(-overlap);
  return (truth.element_count() - agreement) / truth.element_count();
}

// Pairwise confusion between the estimated and the true grouping. A pair of
// levels is a positive when the truth keeps it separated, so fn counts pairs
// fused by mistake and fp pairs split by mistake:
//   fnr = fn / (tp + fn)   undefined when the truth fuses everything
//   fpr = fp / (tn + fp)   undefined when the truth separates everything
struct PairConfusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> fpr, fnr;

  long pair_count() const { return tp + fp + tn + fn; }
};

inline PairConfusion pair_confusion(const LevelPartition& truth,
                                    const LevelPartition& estimate) {
  if (truth.element_count() != estimate.element_count())
    throw DataError("partitions cover different element counts");
  PairConfusion out;
  const int n = truth.element_count();
  for (int g = 0; g < n; ++g)
    for (int h = g + 1; h < n; ++h) {
      const bool fused_truth = truth.assignment()[g] == truth.assignment()[h];
      const bool fused_est = estimate.assignment()[g] == estimate.assignment()[h];
      if (fused_truth && fused_est)
        ++out.tn;
      else if (fused_truth && !fused_est)
        ++out.fp;
      else if (!fused_truth && fused_est)
        ++out.fn;
      else
        ++out.tp;
    }
  if (out.tp + out.fn > 0)
    out.fnr = static_cast<double>(out.fn) / static_cast<double>(out.tp + out.fn);
  if (out.tn + out.fp > 0)
    out.fpr = static_cast<double>(out.fp) / static_cast<double>(out.tn + out.fp);
  return out;
}

// Mean squared estimation error over the intercept and the categorical
// effects (continuous effects excluded): divisor is their count, C + 1.
inline double mse(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth,
                  const CoefficientLayout& layout) {
  if (estimate.size() != layout.columns() || truth.size() != layout.columns())
    throw DataError("coefficient vector does not match the layout");
  double sum = 0.0;
  long count = 0;
  for (int c = 0; c < layout.columns(); ++c) {
    if (layout.terms[c].kind == TermKind::Continuous) continue;
    const double d = estimate[c] - truth[c];
    sum += d * d;
    ++count;
  }
  return sum / static_cast<double>(count);
}

// Mean squared prediction error on held-out data.
inline double mspe(const Eigen::MatrixXd& X_new, const Eigen::VectorXd& y_new,
                   const Eigen::VectorXd& coef) {
  if (X_new.rows() != y_new.size()) throw DataError("prediction rows mismatch");
  if (X_new.cols() != coef.size()) throw DataError("prediction columns mismatch");
  if (y_new.size() == 0) throw DataError("empty prediction set");
  return (y_new - X_new * coef).squaredNorm() / static_cast<double>(y_new.size());
}

}  // namespace effectfuse
