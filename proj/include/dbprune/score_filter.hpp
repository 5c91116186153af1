#pragma once

#include "dbprune/embed_store.hpp"

namespace dbprune {

struct ScoreFilterConfig {
  enum class Mode { kAbsoluteThreshold, kTopFraction };

  Mode mode = Mode::kAbsoluteThreshold;
  double threshold = 0.3;
  double fraction = 1.0;

  void validate() const;
};

struct ScoreFilterResult {
  SelectionMask mask;
  // Lowest kept score; NaN when nothing was kept.
  double cut_score = 0.0;
};

/// Keeps ids with score >= t. Only strictly lower scores are dropped.
ScoreFilterResult filter_by_threshold(const ScoreArray& scores, double t);

/// Keeps the ceil(fraction * rows) highest-scoring ids; at the cut, lower
/// ids win. Output ids are ascending.
ScoreFilterResult filter_top_fraction(const ScoreArray& scores, double fraction);

/// Size of the top-fraction selection: ceil(fraction * rows), with products
/// that land within 1e-9 of an integer treated as that integer.
std::size_t top_fraction_count(std::size_t rows, double fraction);

ScoreFilterResult apply_score_filter(const ScoreArray& scores,
                                     const ScoreFilterConfig& config);

}  // namespace dbprune
