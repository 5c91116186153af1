#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace dbprune {

/// minimize sum_j (x_j^2 - 2 q_j x_j)  s.t.  sum_j x_j = total,
///                                          lb_j <= x_j <= ub_j.
/// With q_j = P_j * N, lb_j = 1 and ub_j = M_j this is the per-cluster
/// sample allocation.
struct AllocationProblem {
  std::vector<double> q;
  std::vector<double> lb;
  std::vector<double> ub;
  double total = 0.0;

  std::size_t size() const noexcept { return q.size(); }

  /// Throws std::invalid_argument on ragged vectors or lb > ub, and
  /// InfeasibleError when total is outside [sum lb, sum ub].
  void validate() const;

  /// Default bounds: lb = 1, ub = member counts.
  static AllocationProblem for_clusters(std::span<const double> q,
                                        std::span<const std::size_t> members,
                                        std::size_t total);
};

struct Allocation {
  std::vector<double> x_real;
  std::vector<std::int64_t> x_int;
  double lambda = 0.0;
  std::vector<std::size_t> active_lower;
  std::vector<std::size_t> active_upper;
};

/// (lambda, g(lambda)) pairs evaluated by the bisection, in probe order.
struct SolveTrace {
  std::vector<std::pair<double, double>> probes;
};

/// Exact minimizer: the Euclidean projection of q onto the box-intersected
/// hyperplane, x_j = clamp(q_j + lambda, lb_j, ub_j), with lambda found by
/// bisection on the monotone g(lambda) = sum_j x_j(lambda) - total and then
/// polished in closed form over the free set. Fills x_real, lambda and the
/// active sets; x_int is left empty.
Allocation solve(const AllocationProblem& prob, SolveTrace* trace = nullptr);

/// KKT conditions of the allocation QP at (x, lambda), all at tolerance tol.
bool kkt_check(const AllocationProblem& prob, std::span<const double> x,
               double lambda, double tol);

/// Enumerates all 3^k free / at-lower / at-upper patterns and returns the
/// best feasible stationary point. k <= 12.
std::vector<double> oracle_solve(const AllocationProblem& prob);

/// Largest-remainder rounding of a feasible x_real: floors clamped into the
/// integer bounds, then single units go to the largest fractional parts
/// (ties: lower index) until the sum equals total.
std::vector<std::int64_t> integer_repair(std::span<const double> x_real,
                                         const AllocationProblem& prob);

/// Objective sum_j (x_j^2 - 2 q_j x_j).
double qp_objective(const AllocationProblem& prob, std::span<const double> x);

/// solve() followed by integer_repair().
Allocation allocate(const AllocationProblem& prob);

/// Water level L with sum_j min(ub_j, L) = total: the per-cluster count of
/// the most even allocation. Equals total / k when no cluster is capped.
double equal_share(const AllocationProblem& prob);

/// Raises every lower bound to min(ub_j, floor(beta * equal_share)). At
/// beta = 1 the solution is the most even feasible allocation; beta = 0
/// returns the problem untouched.
AllocationProblem with_balance_ratio(AllocationProblem prob, double beta);

/// Text problem format: first non-comment line N, then one "q lb ub" line
/// per cluster. '#' starts a comment.
AllocationProblem read_problem(std::istream& in);
void write_problem(std::ostream& out, const AllocationProblem& prob);

/// One "x_real x_int" line per cluster.
void write_allocation(std::ostream& out, const Allocation& alloc);

}  // namespace dbprune
