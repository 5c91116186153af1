#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dbprune/errors.hpp"
#include "dbprune/qp_alloc.hpp"
#include "oracles.hpp"

using namespace dbprune;

namespace {

AllocationProblem make(std::vector<double> q, std::vector<double> lb,
                       std::vector<double> ub, double total) {
  return {std::move(q), std::move(lb), std::move(ub), total};
}

// Random point of {sum x = total, lb <= x <= ub}: start at lb and pour the
// slack into coordinates in random order.
std::vector<double> random_feasible(const AllocationProblem& p,
                                    std::mt19937_64& rng) {
  std::vector<double> x = p.lb;
  double slack = p.total - std::accumulate(x.begin(), x.end(), 0.0);
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto j = order[r];
    const double room = p.ub[j] - x[j];
    const double add = r + 1 == order.size() ? std::min(room, slack)
                                             : std::min(room, slack * u(rng));
    x[j] += add;
    slack -= add;
  }
  // Whatever is left goes wherever there is room.
  for (auto j : order) {
    const double add = std::min(p.ub[j] - x[j], slack);
    x[j] += add;
    slack -= add;
  }
  return x;
}

}  // namespace

TEST_CASE("solve hand examples") {
  SUBCASE("upper bound binds") {
    const auto p = make({5, 3, 2}, {1, 1, 1}, {4, 10, 10}, 10);
    const auto a = solve(p);
    CHECK(a.x_real[0] == 4.0);
    CHECK(a.x_real[1] == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(a.x_real[2] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(a.lambda == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a.active_upper == std::vector<std::size_t>{0});
    CHECK(a.active_lower.empty());
  }
  SUBCASE("lower bound binds") {
    const auto p = make({0.2, 9.8}, {1, 1}, {10, 10}, 10);
    const auto a = solve(p);
    CHECK(a.x_real[0] == 1.0);
    CHECK(a.x_real[1] == doctest::Approx(9.0).epsilon(1e-12));
    CHECK(a.lambda == doctest::Approx(-0.8).epsilon(1e-12));
    CHECK(a.active_lower == std::vector<std::size_t>{0});
  }
  SUBCASE("feasible q is returned unchanged") {
    const auto p = make({2.5, 3.5, 4}, {1, 1, 1}, {5, 5, 5}, 10);
    const auto a = solve(p);
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(a.x_real[j] == doctest::Approx(p.q[j]).epsilon(1e-12));
    CHECK(std::abs(a.lambda) <= 1e-12);
  }
  SUBCASE("single cluster takes the total") {
    const auto p = make({-3}, {1}, {20}, 7);
    CHECK(solve(p).x_real[0] == doctest::Approx(7.0));
    CHECK(oracle_solve(p)[0] == doctest::Approx(7.0));
  }
  SUBCASE("fully pinned bounds") {
    const auto p = make({9, -2, 4}, {2, 3, 5}, {2, 3, 5}, 10);
    CHECK(solve(p).x_real == std::vector<double>{2, 3, 5});
    CHECK(oracle_solve(p) == std::vector<double>{2, 3, 5});
  }
}

TEST_CASE("feasibility errors list the bound sums") {
  const auto p = make({1, 1}, {3, 3}, {4, 4}, 5);
  try {
    solve(p);
    FAIL("expected InfeasibleError");
  } catch (const InfeasibleError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("sum(lb) = 6") != std::string::npos);
    CHECK(msg.find("8") != std::string::npos);
    CHECK(e.code() == ExitCode::kInfeasible);
  }
  CHECK_THROWS_AS(solve(make({1, 1}, {1, 1}, {2, 2}, 5)), InfeasibleError);
  CHECK_THROWS_AS(solve(make({1, 1}, {3, 1}, {2, 2}, 3)), std::invalid_argument);
  CHECK_THROWS_AS(oracle_solve(make({1, 1}, {3, 3}, {4, 4}, 5)), InfeasibleError);
}

TEST_CASE("kkt_check") {
  const auto p = make({5, 3, 2}, {1, 1, 1}, {4, 10, 10}, 10);
  const std::vector<double> x{4, 3.5, 2.5};
  CHECK(kkt_check(p, x, 0.5, 1e-7));
  auto bumped = x;
  bumped[1] += 1e-3;
  bumped[2] -= 1e-3;  // keep the sum so only stationarity fails
  CHECK_FALSE(kkt_check(p, bumped, 0.5, 1e-7));
  CHECK_FALSE(kkt_check(p, std::vector<double>{4, 3.5, 2.6}, 0.5, 1e-7));
  // x_0 at its upper bound needs q_0 + lambda >= 4.
  CHECK_FALSE(kkt_check(p, x, -2.0, 1e-7));
}

TEST_CASE("solve agrees with the active-set oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> kdist(2, 8);
  for (int inst = 0; inst < 300; ++inst) {
    const auto p = oracle::random_problem(rng, kdist(rng));
    SolveTrace trace;
    const auto a = solve(p, &trace);
    const auto ref = oracle_solve(p);
    for (std::size_t j = 0; j < p.size(); ++j)
      CHECK(std::abs(a.x_real[j] - ref[j]) <= 1e-8);
    CHECK(kkt_check(p, a.x_real, a.lambda, 1e-7));
    CHECK(std::abs(std::accumulate(a.x_real.begin(), a.x_real.end(), 0.0) -
                   p.total) <= 1e-9 * std::max(1.0, p.total));

    // g is non-decreasing in lambda along every probe the bisection made.
    auto probes = trace.probes;
    std::sort(probes.begin(), probes.end());
    for (std::size_t t = 1; t < probes.size(); ++t)
      CHECK(probes[t].second >= probes[t - 1].second);

    // No feasible point beats the solution.
    const double best = qp_objective(p, a.x_real);
    for (int s = 0; s < 100; ++s) {
      const auto y = random_feasible(p, rng);
      CHECK(best <= qp_objective(p, y) + 1e-9);
    }
  }
}

TEST_CASE("solve scales to many clusters") {
  std::mt19937_64 rng(9);
  const auto p = oracle::random_problem(rng, 10000);
  const auto a = solve(p);
  CHECK(kkt_check(p, a.x_real, a.lambda, 1e-7));
}

TEST_CASE("integer_repair") {
  SUBCASE("half fractions tie toward the lower index") {
    const auto p = make({5, 3, 2}, {1, 1, 1}, {4, 10, 10}, 10);
    CHECK(integer_repair(std::vector<double>{4, 3.5, 2.5}, p) ==
          std::vector<std::int64_t>{4, 4, 2});
  }
  SUBCASE("largest fraction receives the unit") {
    const auto p = make({1, 1, 1}, {1, 1, 1}, {2, 2, 2}, 4);
    CHECK(integer_repair(std::vector<double>{1.2, 1.2, 1.6}, p) ==
          std::vector<std::int64_t>{1, 1, 2});
  }
  SUBCASE("integral input is unchanged") {
    const auto p = make({1, 1, 1}, {1, 1, 1}, {9, 9, 9}, 12);
    CHECK(integer_repair(std::vector<double>{3, 4, 5}, p) ==
          std::vector<std::int64_t>{3, 4, 5});
  }
  SUBCASE("random solved instances") {
    std::mt19937_64 rng(77);
    for (int inst = 0; inst < 500; ++inst) {
      const auto p = oracle::random_problem(rng, 2 + inst % 30);
      const auto a = allocate(p);
      std::int64_t sum = 0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        sum += a.x_int[j];
        CHECK(a.x_int[j] >= p.lb[j]);
        CHECK(a.x_int[j] <= p.ub[j]);
        CHECK(std::abs(double(a.x_int[j]) - a.x_real[j]) < 1.0);
      }
      CHECK(sum == static_cast<std::int64_t>(p.total));
    }
  }
  CHECK_THROWS_AS(integer_repair(std::vector<double>{1.5, 1.5},
                                 make({1, 1}, {1, 1}, {2, 2}, 3.5)),
                  std::invalid_argument);
}

TEST_CASE("balance ratio") {
  const std::vector<double> q{60, 30, 8, 2};
  const std::vector<std::size_t> members{100, 50, 20, 10};
  const auto base = AllocationProblem::for_clusters(q, members, 100);
  CHECK(base.lb == std::vector<double>{1, 1, 1, 1});
  CHECK(base.ub == std::vector<double>{100, 50, 20, 10});

  const auto zero = with_balance_ratio(base, 0.0);
  CHECK(zero.q == base.q);
  CHECK(zero.lb == base.lb);
  CHECK(zero.ub == base.ub);
  CHECK(zero.total == base.total);

  // Clusters of 10 and 20 are capped, leaving 70 for the other two: 35 each.
  CHECK(equal_share(base) == 35.0);
  const auto full = with_balance_ratio(base, 1.0);
  CHECK(full.lb == std::vector<double>{35, 35, 20, 10});
  const auto half = with_balance_ratio(base, 0.5);
  CHECK(half.lb == std::vector<double>{17, 17, 17, 10});
  // Without caps the share is total / k.
  CHECK(equal_share(make({1, 1, 1, 1}, {1, 1, 1, 1}, {50, 50, 50, 50}, 100)) == 25.0);
  CHECK(equal_share(make({1, 1}, {1, 1}, {3, 4}, 7)) == 4.0);

  const auto a0 = allocate(zero);
  const auto a1 = allocate(full);
  auto var = [](const std::vector<std::int64_t>& x) {
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double v = 0.0;
    for (auto xi : x) v += (xi - mean) * (xi - mean);
    return v / x.size();
  };
  CHECK(var(a1.x_int) < var(a0.x_int));
  CHECK(a1.x_int == std::vector<std::int64_t>{35, 35, 20, 10});
  CHECK_THROWS_AS(with_balance_ratio(base, 1.5), std::invalid_argument);
}

TEST_CASE("problem text format") {
  std::istringstream in("# demo\n10\n5 1 4\n3 1 10  # trailing comment\n\n2 1 10\n");
  const auto p = read_problem(in);
  CHECK(p.total == 10);
  CHECK(p.q == std::vector<double>{5, 3, 2});
  CHECK(p.ub == std::vector<double>{4, 10, 10});

  std::ostringstream out;
  write_problem(out, p);
  std::istringstream back(out.str());
  const auto p2 = read_problem(back);
  CHECK(p2.q == p.q);
  CHECK(p2.lb == p.lb);
  CHECK(p2.ub == p.ub);
  CHECK(p2.total == p.total);

  std::ostringstream alloc;
  write_allocation(alloc, allocate(p));
  CHECK(alloc.str() == "4 4\n3.5 4\n2.5 2\n");

  std::istringstream bad1("10\n5 1\n");
  CHECK_THROWS_AS(read_problem(bad1), FormatError);
  std::istringstream bad2("10\n5 x 4\n");
  CHECK_THROWS_AS(read_problem(bad2), FormatError);
  std::istringstream bad3("# nothing\n");
  CHECK_THROWS_AS(read_problem(bad3), FormatError);
}
