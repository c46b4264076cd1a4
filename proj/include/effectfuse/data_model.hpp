// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "effectfuse/common.hpp"

namespace effectfuse {

// Allocation draws for one covariate, draws x effects. uint16 keeps long
// traces of wide covariates compact.
using AllocMatrix = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>;

// Categorical covariate with levels[0] as the baseline. codes[i] indexes into
// levels for observation i. A covariate with c+1 levels contributes c effects.
struct CategoricalCovariate {
  std::string name;
  std::vector<std::string> levels;
  std::vector<int> codes;

  int level_count() const { return static_cast<int>(levels.size()); }
  int effect_count() const { return level_count() - 1; }
};

struct ContinuousCovariate {
  std::string name;
  Eigen::VectorXd values;
};

struct Dataset {
  Eigen::VectorXd response;
  std::vector<CategoricalCovariate> categorical;
  std::vector<ContinuousCovariate> continuous;

  Eigen::Index n() const { return response.size(); }

  // Structural checks shared by model fitting and simulation. When
  // require_all_levels_observed is false (prediction data), levels that never
  // occur are allowed; everything else still has to hold.
  void validate(bool require_all_levels_observed = true) const {
    if (response.size() == 0) throw DataError("dataset has no observations");
    for (Eigen::Index i = 0; i < response.size(); ++i)
      if (!std::isfinite(response[i]))
        throw DataError("response contains a non-finite value at row " +
                        std::to_string(i));
    std::set<std::string> names;
    for (const auto& cov : categorical) {
      if (cov.name.empty()) throw DataError("categorical covariate with empty name");
      if (!names.insert(cov.name).second)
        throw DataError("duplicate covariate name '" + cov.name + "'");
      if (cov.level_count() < 2)
        throw DataError("covariate '" + cov.name + "' needs at least 2 levels");
      std::set<std::string> lv(cov.levels.begin(), cov.levels.end());
      if (lv.size() != cov.levels.size())
        throw DataError("covariate '" + cov.name + "' has duplicate level labels");
      if (static_cast<Eigen::Index>(cov.codes.size()) != response.size())
        throw DataError("covariate '" + cov.name + "' length mismatch");
      std::vector<bool> seen(cov.levels.size(), false);
      for (int code : cov.codes) {
        if (code < 0 || code >= cov.level_count())
          throw DataError("covariate '" + cov.name + "' has a level code out of range");
        seen[code] = true;
      }
      if (require_all_levels_observed)
        for (int k = 1; k < cov.level_count(); ++k)
          if (!seen[k])
            throw DataError("covariate '" + cov.name + "' level '" +
                            cov.levels[k] + "' never occurs in the data");
    }
    for (const auto& cov : continuous) {
      if (cov.name.empty()) throw DataError("continuous covariate with empty name");
      if (!names.insert(cov.name).second)
        throw DataError("duplicate covariate name '" + cov.name + "'");
      if (cov.values.size() != response.size())
        throw DataError("covariate '" + cov.name + "' length mismatch");
      for (Eigen::Index i = 0; i < cov.values.size(); ++i)
        if (!std::isfinite(cov.values[i]))
          throw DataError("covariate '" + cov.name + "' has a non-finite value");
    }
  }
};

enum class TermKind { Intercept, CategoricalEffect, Continuous };

struct TermInfo {
  TermKind kind;
  int covariate;  // index into Dataset::categorical or ::continuous; -1 for intercept
  int level;      // level index (>= 1) for categorical effects; -1 otherwise
  std::string name;
};

// Maps design columns to model terms. Column 0 is always the intercept, then
// the dummy blocks for each categorical covariate in order, then continuous.
struct CoefficientLayout {
  std::vector<TermInfo> terms;
  std::vector<std::pair<int, int>> categorical_span;  // (first column, effect count)
  std::vector<int> continuous_column;

  int columns() const { return static_cast<int>(terms.size()); }
};

struct DesignMatrix {
  Eigen::MatrixXd matrix;
  CoefficientLayout layout;
};

// Dummy coding against the baseline level: column for level k of covariate j
// is 1 exactly when codes[i] == k, so a row of the block sums to 1 unless the
// observation sits at the baseline.
inline DesignMatrix build_design(const Dataset& data,
                                 bool require_all_levels_observed = true) {
  data.validate(require_all_levels_observed);
  const Eigen::Index n = data.n();
  int p = 1;
  for (const auto& cov : data.categorical) p += cov.effect_count();
  p += static_cast<int>(data.continuous.size());

  DesignMatrix design;
  design.matrix = Eigen::MatrixXd::Zero(n, p);
  design.matrix.col(0).setOnes();
  design.layout.terms.push_back({TermKind::Intercept, -1, -1, "(Intercept)"});

  int col = 1;
  for (std::size_t j = 0; j < data.categorical.size(); ++j) {
    const auto& cov = data.categorical[j];
    design.layout.categorical_span.emplace_back(col, cov.effect_count());
    for (int k = 1; k < cov.level_count(); ++k) {
      for (Eigen::Index i = 0; i < n; ++i)
        if (cov.codes[i] == k) design.matrix(i, col) = 1.0;
      design.layout.terms.push_back({TermKind::CategoricalEffect,
                                     static_cast<int>(j), k,
                                     cov.name + ":" + cov.levels[k]});
      ++col;
    }
  }
  for (std::size_t j = 0; j < data.continuous.size(); ++j) {
    const auto& cov = data.continuous[j];
    design.layout.continuous_column.push_back(col);
    design.matrix.col(col) = cov.values;
    design.layout.terms.push_back({TermKind::Continuous, static_cast<int>(j), -1,
                                   cov.name});
    ++col;
  }
  return design;
}

// Structured view of a flattened coefficient vector.
struct CoefficientVector {
  double intercept = 0.0;
  std::vector<Eigen::VectorXd> categorical;  // one block of c_j effects per covariate
  Eigen::VectorXd continuous;
};

inline Eigen::VectorXd flatten(const CoefficientVector& coef,
                               const CoefficientLayout& layout) {
  if (coef.categorical.size() != layout.categorical_span.size())
    throw DataError("coefficient vector has wrong number of categorical blocks");
  Eigen::VectorXd out(layout.columns());
  out[0] = coef.intercept;
  for (std::size_t j = 0; j < coef.categorical.size(); ++j) {
    const auto [first, count] = layout.categorical_span[j];
    if (coef.categorical[j].size() != count)
      throw DataError("categorical block " + std::to_string(j) + " has wrong length");
    out.segment(first, count) = coef.categorical[j];
  }
  if (coef.continuous.size() !=
      static_cast<Eigen::Index>(layout.continuous_column.size()))
    throw DataError("continuous block has wrong length");
  for (std::size_t j = 0; j < layout.continuous_column.size(); ++j)
    out[layout.continuous_column[j]] = coef.continuous[j];
  return out;
}

inline CoefficientVector unflatten(const Eigen::VectorXd& flat,
                                   const CoefficientLayout& layout) {
  if (flat.size() != layout.columns())
    throw DataError("flattened coefficient vector has wrong length");
  CoefficientVector coef;
  coef.intercept = flat[0];
  for (const auto& [first, count] : layout.categorical_span)
    coef.categorical.push_back(flat.segment(first, count));
  coef.continuous.resize(layout.continuous_column.size());
  for (std::size_t j = 0; j < layout.continuous_column.size(); ++j)
    coef.continuous[j] = flat[layout.continuous_column[j]];
  return coef;
}

}  // namespace effectfuse
