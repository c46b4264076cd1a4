// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"

namespace effectfuse {

// Partition of the pseudo-levels {0, .., c} of a covariate, element 0 being
// the baseline. Stored canonically as a restricted growth string: block ids
// appear in order of each block's smallest member, so assignment()[0] == 0
// and the baseline block is always block 0. Two labelings describing the
// same grouping compare equal.
class LevelPartition {
 public:
  LevelPartition() = default;

  LevelPartition(std::string covariate, const std::vector<int>& labels)
      : covariate_(std::move(covariate)) {
    if (labels.empty()) throw DataError("partition of zero elements");
    assignment_.resize(labels.size());
    std::map<int, int> relabel;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, inserted] =
          relabel.try_emplace(labels[i], static_cast<int>(relabel.size()));
      assignment_[i] = it->second;
      (void)inserted;
    }
    block_count_ = static_cast<int>(relabel.size());
  }

  static LevelPartition from_blocks(std::string covariate, int element_count,
                                    const std::vector<std::vector<int>>& blocks) {
    std::vector<int> labels(element_count, -1);
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (int e : blocks[b]) {
        if (e < 0 || e >= element_count)
          throw DataError("partition block element out of range");
        if (labels[e] != -1) throw DataError("partition blocks overlap");
        labels[e] = static_cast<int>(b);
      }
    for (int e = 0; e < element_count; ++e)
      if (labels[e] == -1)
        throw DataError("partition does not cover element " + std::to_string(e));
    return LevelPartition(std::move(covariate), labels);
  }

  const std::string& covariate() const { return covariate_; }
  int element_count() const { return static_cast<int>(assignment_.size()); }
  int block_count() const { return block_count_; }
  const std::vector<int>& assignment() const { return assignment_; }

  std::vector<std::vector<int>> blocks() const {
    std::vector<std::vector<int>> out(block_count_);
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      out[assignment_[i]].push_back(static_cast<int>(i));
    return out;
  }

  // Elements fused with the baseline; block 0 by canonicity.
  std::vector<int> zero_block() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] == 0) out.push_back(static_cast<int>(i));
    return out;
  }

  friend bool operator==(const LevelPartition& a, const LevelPartition& b) {
    return a.assignment_ == b.assignment_;
  }
  friend bool operator<(const LevelPartition& a, const LevelPartition& b) {
    return a.assignment_ < b.assignment_;
  }

 private:
  std::string covariate_;
  std::vector<int> assignment_;
  int block_count_ = 0;
};

// Partition induced by one allocation draw: the baseline joins as pseudo-level
// 0, pinned to component 0, so effects allocated to the spike are fused with
// it. Invariant under relabeling of the non-zero components.
inline LevelPartition draw_partition(std::string covariate,
                                     const std::vector<int>& alloc) {
  std::vector<int> extended(alloc.size() + 1);
  extended[0] = 0;
  for (std::size_t k = 0; k < alloc.size(); ++k) {
    if (alloc[k] < 0) throw DataError("negative allocation");
    extended[k + 1] = alloc[k];
  }
  return LevelPartition(std::move(covariate), extended);
}

inline std::vector<int> alloc_row(const AllocMatrix& trace, Eigen::Index row) {
  std::vector<int> alloc(trace.cols());
  for (Eigen::Index k = 0; k < trace.cols(); ++k) alloc[k] = trace(row, k);
  return alloc;
}

// Streaming pairwise co-allocation counts over the pseudo-levels, baseline
// included. similarity() returns the draw-averaged matrix: symmetric, unit
// diagonal, entries in [0, 1].
class CoclusterAccumulator {
 public:
  explicit CoclusterAccumulator(int effect_count)
      : counts_(Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(
            effect_count + 1, effect_count + 1)) {
    if (effect_count < 1) throw DataError("co-clustering needs at least one effect");
  }

  void add(const std::vector<int>& alloc) {
    if (static_cast<Eigen::Index>(alloc.size()) + 1 != counts_.rows())
      throw DataError("allocation length does not match accumulator");
    ext_.resize(alloc.size() + 1);
    ext_[0] = 0;
    std::copy(alloc.begin(), alloc.end(), ext_.begin() + 1);
    const int m = static_cast<int>(ext_.size());
    for (int g = 0; g < m; ++g)
      for (int h = g + 1; h < m; ++h)
        counts_(g, h) += ext_[g] == ext_[h];
    ++draws_;
  }

  long draws() const { return draws_; }

  Eigen::MatrixXd similarity() const {
    if (draws_ == 0) throw DataError("no draws accumulated");
    const Eigen::Index m = counts_.rows();
    Eigen::MatrixXd C(m, m);
    for (Eigen::Index g = 0; g < m; ++g) {
      C(g, g) = 1.0;
      for (Eigen::Index h = g + 1; h < m; ++h) {
        C(g, h) = static_cast<double>(counts_(g, h)) / static_cast<double>(draws_);
        C(h, g) = C(g, h);
      }
    }
    return C;
  }

 private:
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts_;
  std::vector<int> ext_;
  long draws_ = 0;
};

inline Eigen::MatrixXd accumulate_cocluster(const AllocMatrix& trace) {
  if (trace.rows() == 0) throw DataError("empty allocation trace");
  CoclusterAccumulator acc(static_cast<int>(trace.cols()));
  for (Eigen::Index r = 0; r < trace.rows(); ++r) acc.add(alloc_row(trace, r));
  return acc.similarity();
}

struct MostFrequentResult {
  LevelPartition partition;
  long frequency = 0;
  bool tied = false;
};

// Mode of the visited partitions in canonical form. Ties are broken toward
// the lexicographically smallest restricted growth string and flagged.
inline MostFrequentResult most_frequent_partition(const AllocMatrix& trace,
                                                  const std::string& covariate) {
  if (trace.rows() == 0) throw DataError("empty allocation trace");
  std::map<std::vector<int>, long> counts;
  for (Eigen::Index r = 0; r < trace.rows(); ++r)
    counts[draw_partition(covariate, alloc_row(trace, r)).assignment()] += 1;
  MostFrequentResult best;
  for (const auto& [assignment, count] : counts) {
    if (count > best.frequency) {
      best.partition = LevelPartition(covariate, assignment);
      best.frequency = count;
      best.tied = false;
    } else if (count == best.frequency) {
      best.tied = true;
    }
  }
  return best;
}

struct PamResult {
  std::vector<int> medoids;  // sorted ascending
  std::vector<int> assignment;  // element -> medoid
  double cost = 0.0;
};

// PAM on a dissimilarity matrix. Small instances are solved exactly by
// enumerating medoid subsets; larger ones use the classic greedy BUILD plus
// best-improvement SWAP, which is a local search. Fully deterministic; all
// ties go to the lowest index.
inline PamResult pam(const Eigen::MatrixXd& D, int k) {
  const Eigen::Index n = D.rows();
  if (D.cols() != n || n == 0) throw DataError("dissimilarity matrix must be square");
  if (k < 1 || k > n) throw DataError("cluster count out of range");

  std::vector<int> medoids;
  std::vector<bool> is_medoid(n, false);
  std::vector<double> d1(n, std::numeric_limits<double>::infinity());

  const double subsets = std::exp(std::lgamma(static_cast<double>(n) + 1.0) -
                                  std::lgamma(k + 1.0) -
                                  std::lgamma(static_cast<double>(n - k) + 1.0));
  if (subsets <= 1e4) {
    std::vector<int> pick(k);
    std::iota(pick.begin(), pick.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    while (true) {
      double cost = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        double d = std::numeric_limits<double>::infinity();
        for (int m : pick) d = std::min(d, D(j, m));
        cost += d;
      }
      if (cost < best) best = cost, medoids = pick;
      int pos = k - 1;
      while (pos >= 0 && pick[pos] == static_cast<int>(n) - k + pos) --pos;
      if (pos < 0) break;
      ++pick[pos];
      for (int q = pos + 1; q < k; ++q) pick[q] = pick[q - 1] + 1;
    }
    for (int m : medoids) is_medoid[m] = true;
    std::sort(medoids.begin(), medoids.end());
    PamResult out;
    out.medoids = medoids;
    out.assignment.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (is_medoid[static_cast<int>(j)]) {
        out.assignment[j] = static_cast<int>(j);
        continue;
      }
      int bi = medoids[0];
      double bd = D(j, medoids[0]);
      for (int m : medoids)
        if (D(j, m) < bd) bd = D(j, m), bi = m;
      out.assignment[j] = bi;
      out.cost += bd;
    }
    return out;
  }

  // BUILD: first the most central point, then maximal incremental gain
  {
    int best = 0;
    double best_sum = D.col(0).sum();
    for (Eigen::Index c = 1; c < n; ++c) {
      const double s = D.col(c).sum();
      if (s < best_sum) best_sum = s, best = static_cast<int>(c);
    }
    medoids.push_back(best);
    is_medoid[best] = true;
    for (Eigen::Index j = 0; j < n; ++j) d1[j] = D(j, best);
  }
  while (static_cast<int>(medoids.size()) < k) {
    int best = -1;
    double best_gain = -1.0;
    for (int c = 0; c < n; ++c) {
      if (is_medoid[c]) continue;
      double gain = 0.0;
      for (Eigen::Index j = 0; j < n; ++j)
        gain += std::max(0.0, d1[j] - D(j, c));
      if (gain > best_gain) best_gain = gain, best = c;
    }
    medoids.push_back(best);
    is_medoid[best] = true;
    for (Eigen::Index j = 0; j < n; ++j) d1[j] = std::min(d1[j], D(j, best));
  }

  // nearest and second nearest medoid distance per point
  std::vector<int> n1(n);
  std::vector<double> d2(n);
  auto refresh_nearest = [&] {
    for (Eigen::Index j = 0; j < n; ++j) {
      double b1 = std::numeric_limits<double>::infinity(), b2 = b1;
      int i1 = -1;
      for (int m : medoids) {
        const double d = D(j, m);
        if (d < b1) {
          b2 = b1;
          b1 = d;
          i1 = m;
        } else if (d < b2) {
          b2 = d;
        }
      }
      d1[j] = b1;
      n1[j] = i1;
      d2[j] = b2;
    }
  };
  refresh_nearest();

  if (k < n) {
    for (int iter = 0; iter < 10000; ++iter) {
      double best_delta = -1e-12;
      int best_mi = -1, best_h = -1;
      for (std::size_t mi = 0; mi < medoids.size(); ++mi) {
        const int m = medoids[mi];
        for (int h = 0; h < n; ++h) {
          if (is_medoid[h]) continue;
          double delta = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) {
            if (n1[j] == m)
              delta += std::min(D(j, h), d2[j]) - d1[j];
            else
              delta += std::min(0.0, D(j, h) - d1[j]);
          }
          if (delta < best_delta) {
            best_delta = delta;
            best_mi = static_cast<int>(mi);
            best_h = h;
          }
        }
      }
      if (best_mi < 0) break;
      is_medoid[medoids[best_mi]] = false;
      is_medoid[best_h] = true;
      medoids[best_mi] = best_h;
      refresh_nearest();
    }
  }

  std::sort(medoids.begin(), medoids.end());
  PamResult out;
  out.medoids = medoids;
  out.assignment.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    if (is_medoid[static_cast<int>(j)]) {
      out.assignment[j] = static_cast<int>(j);  // a medoid is its own cluster
      continue;
    }
    int bi = medoids[0];
    double bd = D(j, medoids[0]);
    for (int m : medoids)
      if (D(j, m) < bd) bd = D(j, m), bi = m;
    out.assignment[j] = bi;
    out.cost += bd;
  }
  return out;
}

// Mean silhouette width. Singleton clusters contribute 0 for their member.
inline double silhouette(const Eigen::MatrixXd& D, const std::vector<int>& assignment) {
  const Eigen::Index n = D.rows();
  if (D.cols() != n || static_cast<Eigen::Index>(assignment.size()) != n)
    throw DataError("assignment does not match dissimilarity matrix");
  std::map<int, int> cluster_id;
  for (int a : assignment) cluster_id.try_emplace(a, static_cast<int>(cluster_id.size()));
  const int k = static_cast<int>(cluster_id.size());
  if (k < 2) throw DataError("silhouette is undefined for a single cluster");

  std::vector<int> label(n);
  std::vector<int> size(k, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    label[i] = cluster_id[assignment[i]];
    size[label[i]] += 1;
  }
  double total = 0.0;
  std::vector<double> mean_to(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(mean_to.begin(), mean_to.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) mean_to[label[j]] += D(i, j);
    const int own = label[i];
    if (size[own] == 1) continue;  // s one own = 0
    const double a = mean_to[own] / (size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c)
      if (c != own && size[c] > 0) b = std::min(b, mean_to[c] / size[c]);
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

struct PamSelectionResult {
  LevelPartition partition;
  int k = 0;
  double silhouette = 0.0;
  bool one_cluster_suspected = false;
  std::vector<double> silhouette_by_k;  // entry i is the width at k = i + 2
};

// Partition from the posterior similarity matrix: PAM on D = 1 - C for
// k = 2..k_max, the mean silhouette width picks k (smaller k on ties). The
// silhouette cannot propose a single cluster, so a best width <= 0 flags
// that no grouping structure is supported.
inline PamSelectionResult select_by_pam(const Eigen::MatrixXd& C,
                                        const std::string& covariate,
                                        int k_max = 30) {
  const Eigen::Index n = C.rows();
  if (C.cols() != n) throw DataError("similarity matrix must be square");
  if (n < 2) throw DataError("need at least two pseudo-levels to cluster");
  if (k_max < 2) throw ConfigError("k_max must be at least 2");
  Eigen::MatrixXd D = (1.0 - C.array()).cwiseMax(0.0);
  D.diagonal().setZero();

  PamSelectionResult out;
  const int hi = static_cast<int>(std::min<Eigen::Index>(k_max, n));
  std::vector<int> best_assignment;
  double best_sil = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= hi; ++k) {
    PamResult res = pam(D, k);
    const double s = silhouette(D, res.assignment);
    out.silhouette_by_k.push_back(s);
    if (s > best_sil) {
      best_sil = s;
      out.k = k;
      best_assignment = res.assignment;
    }
  }
  out.silhouette = best_sil;
  out.partition = LevelPartition(covariate, best_assignment);
  out.one_cluster_suspected = best_sil <= 0.0;
  return out;
}

}  // namespace effectfuse
