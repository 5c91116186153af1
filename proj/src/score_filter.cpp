#include "dbprune/score_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dbprune/errors.hpp"

namespace dbprune {

void ScoreFilterConfig::validate() const {
  if (mode == Mode::kTopFraction && !(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("score: fraction must be in (0, 1]");
  if (mode == Mode::kAbsoluteThreshold && !std::isfinite(threshold))
    throw ConfigError("score: threshold must be finite");
}

ScoreFilterResult filter_by_threshold(const ScoreArray& scores, double t) {
  ScoreFilterResult out;
  out.cut_score = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const double s = scores.scores[i];
    if (s >= t) {
      out.mask.ids.push_back(i);
      if (std::isnan(out.cut_score) || s < out.cut_score) out.cut_score = s;
    }
  }
  return out;
}

std::size_t top_fraction_count(std::size_t rows, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("top fraction must be in (0, 1]");
  const double exact = fraction * static_cast<double>(rows);
  const double nearest = std::round(exact);
  const double count =
      std::abs(exact - nearest) <= 1e-9 ? nearest : std::ceil(exact);
  return std::clamp<std::size_t>(static_cast<std::size_t>(count),
                                 rows == 0 ? 0 : 1, rows);
}

ScoreFilterResult filter_top_fraction(const ScoreArray& scores,
                                      double fraction) {
  const std::size_t keep = top_fraction_count(scores.rows(), fraction);
  std::vector<std::size_t> order(scores.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores.scores[a] > scores.scores[b];
  });
  order.resize(keep);
  ScoreFilterResult out;
  out.cut_score = keep == 0 ? std::numeric_limits<double>::quiet_NaN()
                            : double(scores.scores[order.back()]);
  std::sort(order.begin(), order.end());
  out.mask.ids.assign(order.begin(), order.end());
  return out;
}

ScoreFilterResult apply_score_filter(const ScoreArray& scores,
                                     const ScoreFilterConfig& config) {
  config.validate();
  return config.mode == ScoreFilterConfig::Mode::kTopFraction
             ? filter_top_fraction(scores, config.fraction)
             : filter_by_threshold(scores, config.threshold);
}

}  // namespace dbprune
