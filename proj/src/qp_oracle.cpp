// Brute-force reference for the allocation QP. Shares no code path with
// solve(): every active-set pattern is solved in closed form and the best
// feasible stationary point wins.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dbprune/errors.hpp"
#include "dbprune/qp_alloc.hpp"

namespace dbprune {
namespace {

enum class Side : unsigned char { kFree, kLower, kUpper };

constexpr std::size_t kMaxOracleClusters = 12;

}  // namespace

std::vector<double> oracle_solve(const AllocationProblem& prob) {
  prob.validate();
  const std::size_t k = prob.size();
  if (k > kMaxOracleClusters)
    throw std::invalid_argument("oracle_solve: k = " + std::to_string(k) +
                                " exceeds " +
                                std::to_string(kMaxOracleClusters));

  double scale = std::abs(prob.total);
  for (std::size_t j = 0; j < k; ++j)
    scale = std::max({scale, std::abs(prob.q[j]), std::abs(prob.lb[j]),
                      std::abs(prob.ub[j])});
  const double eps = 1e-10 * std::max(1.0, scale);

  std::size_t patterns = 1;
  for (std::size_t j = 0; j < k; ++j) patterns *= 3;

  std::vector<Side> side(k);
  std::vector<double> x(k);
  std::vector<double> best_kkt, best_any;
  double f_kkt = std::numeric_limits<double>::infinity();
  double f_any = std::numeric_limits<double>::infinity();

  for (std::size_t code = 0; code < patterns; ++code) {
    std::size_t c = code;
    double fixed = 0.0;
    double free_q = 0.0;
    std::size_t free_count = 0;
    for (std::size_t j = 0; j < k; ++j) {
      side[j] = static_cast<Side>(c % 3);
      c /= 3;
      switch (side[j]) {
        case Side::kFree:
          free_q += prob.q[j];
          ++free_count;
          break;
        case Side::kLower:
          fixed += prob.lb[j];
          break;
        case Side::kUpper:
          fixed += prob.ub[j];
          break;
      }
    }

    // Multiplier range allowed by the sign conditions of the bound sides.
    double lambda_min = -std::numeric_limits<double>::infinity();
    double lambda_max = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (side[j] == Side::kUpper)
        lambda_min = std::max(lambda_min, prob.ub[j] - prob.q[j]);
      if (side[j] == Side::kLower)
        lambda_max = std::min(lambda_max, prob.lb[j] - prob.q[j]);
    }

    double lambda;
    if (free_count > 0) {
      lambda = (prob.total - fixed - free_q) / static_cast<double>(free_count);
    } else {
      if (std::abs(fixed - prob.total) > eps) continue;
      lambda = std::clamp(0.0, lambda_min,
                          std::max(lambda_min, lambda_max));
    }

    bool feasible = true;
    for (std::size_t j = 0; j < k && feasible; ++j) {
      switch (side[j]) {
        case Side::kFree:
          x[j] = prob.q[j] + lambda;
          if (x[j] < prob.lb[j] - eps || x[j] > prob.ub[j] + eps)
            feasible = false;
          x[j] = std::clamp(x[j], prob.lb[j], prob.ub[j]);
          break;
        case Side::kLower:
          x[j] = prob.lb[j];
          break;
        case Side::kUpper:
          x[j] = prob.ub[j];
          break;
      }
    }
    if (!feasible) continue;

    const double f = qp_objective(prob, x);
    if (f < f_any) {
      f_any = f;
      best_any = x;
    }
    const bool signs_ok =
        lambda >= lambda_min - eps && lambda <= lambda_max + eps;
    if (signs_ok && f < f_kkt) {
      f_kkt = f;
      best_kkt = x;
    }
  }

  if (!best_kkt.empty()) return best_kkt;
  if (!best_any.empty()) return best_any;
  throw InfeasibleError("oracle_solve: no feasible active-set pattern");
}

}  // namespace dbprune
