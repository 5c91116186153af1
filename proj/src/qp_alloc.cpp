#include "dbprune/qp_alloc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dbprune/errors.hpp"

namespace dbprune {
namespace {

constexpr double kResidualTol = 1e-9;
constexpr double kBracketTol = 1e-12;
constexpr int kMaxBisections = 200;

double clamp_at(const AllocationProblem& p, std::size_t j, double lambda) {
  return std::clamp(p.q[j] + lambda, p.lb[j], p.ub[j]);
}

double residual(const AllocationProblem& p, double lambda) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) s += clamp_at(p, j, lambda);
  return s - p.total;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void AllocationProblem::validate() const {
  if (q.empty()) throw std::invalid_argument("allocation: no clusters");
  if (lb.size() != q.size() || ub.size() != q.size())
    throw std::invalid_argument("allocation: q, lb, ub lengths differ");
  double sum_lb = 0.0;
  double sum_ub = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (!std::isfinite(q[j]) || !std::isfinite(lb[j]) || !std::isfinite(ub[j]))
      throw std::invalid_argument("allocation: non-finite entry at cluster " +
                                  std::to_string(j));
    if (lb[j] > ub[j])
      throw std::invalid_argument("allocation: lb > ub at cluster " +
                                  std::to_string(j));
    sum_lb += lb[j];
    sum_ub += ub[j];
  }
  if (!std::isfinite(total) || total < sum_lb || total > sum_ub)
    throw InfeasibleError("allocation infeasible: sum(lb) = " + fmt(sum_lb) +
                          ", N = " + fmt(total) + ", sum(ub) = " + fmt(sum_ub));
}

AllocationProblem AllocationProblem::for_clusters(
    std::span<const double> q, std::span<const std::size_t> members,
    std::size_t total) {
  if (q.size() != members.size())
    throw std::invalid_argument("allocation: q and member counts differ");
  AllocationProblem p;
  p.q.assign(q.begin(), q.end());
  p.lb.assign(q.size(), 1.0);
  p.ub.reserve(q.size());
  for (auto m : members) p.ub.push_back(static_cast<double>(m));
  p.total = static_cast<double>(total);
  return p;
}

Allocation solve(const AllocationProblem& prob, SolveTrace* trace) {
  prob.validate();
  const std::size_t k = prob.size();

  auto g = [&](double lambda) {
    const double r = residual(prob, lambda);
    if (trace) trace->probes.emplace_back(lambda, r);
    return r;
  };

  double lo = prob.lb[0] - prob.q[0];
  double hi = prob.ub[0] - prob.q[0];
  for (std::size_t j = 1; j < k; ++j) {
    lo = std::min(lo, prob.lb[j] - prob.q[j]);
    hi = std::max(hi, prob.ub[j] - prob.q[j]);
  }
  const double g_lo = g(lo);
  const double g_hi = g(hi);

  double lambda;
  if (std::abs(g_lo) < kResidualTol) {
    lambda = lo;
  } else if (std::abs(g_hi) < kResidualTol) {
    lambda = hi;
  } else {
    lambda = 0.5 * (lo + hi);
    for (int it = 0; it < kMaxBisections; ++it) {
      if (hi - lo < kBracketTol) break;
      const double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      lambda = mid;
      const double gm = g(mid);
      if (std::abs(gm) < kResidualTol) break;
      (gm < 0.0 ? lo : hi) = mid;
    }
  }

  // Closed form over the free set at the located lambda.
  double fixed = 0.0;
  double free_q = 0.0;
  std::size_t free_count = 0;
  for (std::size_t j = 0; j < k; ++j) {
    const double v = prob.q[j] + lambda;
    if (v <= prob.lb[j]) {
      fixed += prob.lb[j];
    } else if (v >= prob.ub[j]) {
      fixed += prob.ub[j];
    } else {
      free_q += prob.q[j];
      ++free_count;
    }
  }
  if (free_count > 0) {
    const double polished =
        (prob.total - fixed - free_q) / static_cast<double>(free_count);
    if (std::abs(residual(prob, polished)) <=
        std::abs(residual(prob, lambda)))
      lambda = polished;
  }

  Allocation out;
  out.lambda = lambda;
  out.x_real.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    out.x_real[j] = clamp_at(prob, j, lambda);
    if (out.x_real[j] <= prob.lb[j]) out.active_lower.push_back(j);
    if (out.x_real[j] >= prob.ub[j]) out.active_upper.push_back(j);
  }
  return out;
}

bool kkt_check(const AllocationProblem& prob, std::span<const double> x,
               double lambda, double tol) {
  if (x.size() != prob.size() || prob.lb.size() != prob.size() ||
      prob.ub.size() != prob.size())
    return false;
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (!std::isfinite(x[j])) return false;
    sum += x[j];
    if (x[j] < prob.lb[j] - tol || x[j] > prob.ub[j] + tol) return false;
    const bool at_lb = std::abs(x[j] - prob.lb[j]) <= tol;
    const bool at_ub = std::abs(x[j] - prob.ub[j]) <= tol;
    const double shifted = prob.q[j] + lambda;
    if (at_lb && at_ub) continue;  // pinned: lb == ub
    if (at_ub) {
      if (shifted < x[j] - tol) return false;
    } else if (at_lb) {
      if (shifted > x[j] + tol) return false;
    } else if (std::abs(x[j] - shifted) > tol) {
      return false;
    }
  }
  return std::abs(sum - prob.total) <= tol;
}

double qp_objective(const AllocationProblem& prob, std::span<const double> x) {
  double f = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j)
    f += x[j] * x[j] - 2.0 * prob.q[j] * x[j];
  return f;
}

std::vector<std::int64_t> integer_repair(std::span<const double> x_real,
                                         const AllocationProblem& prob) {
  const std::size_t k = prob.size();
  if (x_real.size() != k)
    throw std::invalid_argument("integer_repair: x_real length mismatch");
  const double total = std::round(prob.total);
  if (std::abs(total - prob.total) > 1e-9)
    throw std::invalid_argument("integer_repair: total is not an integer");

  std::vector<std::int64_t> lo(k), hi(k), x(k);
  std::vector<double> frac(k);
  std::int64_t remaining = static_cast<std::int64_t>(total);
  for (std::size_t j = 0; j < k; ++j) {
    lo[j] = static_cast<std::int64_t>(std::ceil(prob.lb[j] - 1e-9));
    hi[j] = static_cast<std::int64_t>(std::floor(prob.ub[j] + 1e-9));
    if (lo[j] > hi[j])
      throw std::logic_error("integer_repair: no integer in bounds of cluster " +
                             std::to_string(j));
    x[j] = std::clamp(static_cast<std::int64_t>(std::floor(x_real[j])), lo[j],
                      hi[j]);
    frac[j] = x_real[j] - static_cast<double>(x[j]);
    remaining -= x[j];
  }

  std::vector<std::size_t> order(k);
  while (remaining != 0) {
    const bool add = remaining > 0;
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Largest fractional part first when adding, smallest first when
    // removing; stable sort keeps lower indices first on ties.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return add ? frac[a] > frac[b] : frac[a] < frac[b];
    });
    bool progressed = false;
    for (auto j : order) {
      if (remaining == 0) break;
      if (add && x[j] < hi[j]) {
        ++x[j];
        frac[j] -= 1.0;
        --remaining;
        progressed = true;
      } else if (!add && x[j] > lo[j]) {
        --x[j];
        frac[j] += 1.0;
        ++remaining;
        progressed = true;
      }
    }
    if (!progressed)
      throw std::logic_error("integer_repair: bounds cannot reach the total");
  }
  return x;
}

Allocation allocate(const AllocationProblem& prob) {
  Allocation a = solve(prob);
  a.x_int = integer_repair(a.x_real, prob);
  return a;
}

double equal_share(const AllocationProblem& prob) {
  std::vector<double> ub = prob.ub;
  std::sort(ub.begin(), ub.end());
  double remaining = prob.total;
  for (std::size_t i = 0; i < ub.size(); ++i) {
    const double level = remaining / static_cast<double>(ub.size() - i);
    if (ub[i] >= level) return level;
    remaining -= ub[i];
  }
  return ub.empty() ? 0.0 : ub.back();
}

AllocationProblem with_balance_ratio(AllocationProblem prob, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw std::invalid_argument("balance ratio must be in [0, 1]");
  if (prob.q.empty() || beta == 0.0) return prob;
  const double floor_share = std::floor(beta * equal_share(prob));
  for (std::size_t j = 0; j < prob.size(); ++j)
    prob.lb[j] = std::max(prob.lb[j], std::min(prob.ub[j], floor_share));
  return prob;
}

AllocationProblem read_problem(std::istream& in) {
  AllocationProblem p;
  bool have_total = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    std::istringstream ss(line);
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (!ss.eof())
      throw FormatError("problem file: unparsable value on line " +
                        std::to_string(lineno));
    if (vals.empty()) continue;
    if (!have_total) {
      if (vals.size() != 1)
        throw FormatError("problem file: line " + std::to_string(lineno) +
                          " must hold N alone");
      p.total = vals[0];
      have_total = true;
      continue;
    }
    if (vals.size() != 3)
      throw FormatError("problem file: line " + std::to_string(lineno) +
                        " must be 'q lb ub'");
    p.q.push_back(vals[0]);
    p.lb.push_back(vals[1]);
    p.ub.push_back(vals[2]);
  }
  if (!have_total) throw FormatError("problem file: missing N");
  if (p.q.empty()) throw FormatError("problem file: no clusters");
  return p;
}

void write_problem(std::ostream& out, const AllocationProblem& prob) {
  out << fmt(prob.total) << '\n';
  for (std::size_t j = 0; j < prob.size(); ++j)
    out << fmt(prob.q[j]) << ' ' << fmt(prob.lb[j]) << ' ' << fmt(prob.ub[j])
        << '\n';
}

void write_allocation(std::ostream& out, const Allocation& alloc) {
  for (std::size_t j = 0; j < alloc.x_real.size(); ++j) {
    out << fmt(alloc.x_real[j]);
    if (j < alloc.x_int.size()) out << ' ' << alloc.x_int[j];
    out << '\n';
  }
}

}  // namespace dbprune
