#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbprune/dbp_core.hpp"
#include "dbprune/errors.hpp"
#include "oracles.hpp"

using namespace dbprune;

namespace {

Assignment make_assignment(std::vector<std::uint32_t> labels,
                           std::vector<double> sims) {
  return {std::move(labels), std::move(sims)};
}

KMeansModel unit_axes(std::size_t k, std::size_t dim) {
  KMeansModel m;
  m.k = k;
  m.dim = dim;
  m.centroids.assign(k * dim, 0.0);
  for (std::size_t j = 0; j < k; ++j) m.centroids[j * dim + j] = 1.0;
  return m;
}

const std::vector<std::size_t> kSizes{5000, 2000, 500, 200, 100};
const std::vector<double> kSpreads{0.2, 0.5, 0.8, 0.35, 0.65};

}  // namespace

TEST_CASE("compute_d_intra") {
  CHECK(compute_d_intra(make_assignment({0, 0}, {1.0, 1.0}), 1) ==
        std::vector<double>{0.0});
  CHECK(compute_d_intra(make_assignment({0}, {0.0}), 1) ==
        std::vector<double>{1.0});
  const auto d = compute_d_intra(make_assignment({0, 0, 0}, {1.0, 0.8, 0.6}), 1);
  // Accumulating 1 - sim in member order.
  CHECK(d[0] == 0.19999999999999998);
  try {
    compute_d_intra(make_assignment({0, 2}, {1.0, 1.0}), 3);
    FAIL("expected error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("cluster 1") != std::string::npos);
  }
}

TEST_CASE("compute_d_inter") {
  CHECK(compute_d_inter(unit_axes(2, 3), 1) == std::vector<double>{1.0, 1.0});

  KMeansModel dup = unit_axes(2, 3);
  dup.centroids = {0, 1, 0, 0, 1, 0};
  CHECK(compute_d_inter(dup, 1) == std::vector<double>{0.0, 0.0});

  const auto model = oracle::model_from_rows(oracle::random_unit_rows(4, 6, 3));
  const auto brute = oracle::brute_neighbor_sims(model);
  const auto d = compute_d_inter(model, 2);
  for (std::size_t j = 0; j < 4; ++j) {
    const double want = ((1.0 - brute[j][0]) + (1.0 - brute[j][1])) / 2.0;
    CHECK(std::abs(d[j] - want) <= 1e-12);
  }
}

TEST_CASE("complexity and softmax") {
  const std::vector<double> inter{0.0, 0.5, 1.2};
  const std::vector<double> intra{0.7, 0.2, 0.5};
  const auto c = complexity(inter, intra);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.5 * 0.2);
  CHECK(c[2] == 1.2 * 0.5);

  const std::vector<double> flat(7, 0.3);
  for (double p : softmax_probs(flat, 0.1)) CHECK(std::abs(p - 1.0 / 7) <= 1e-12);

  const std::vector<double> two{1.0, 0.0};
  const auto p = softmax_probs(two, 0.1);
  CHECK(std::abs(p[0] - 0.9999546021312976) <= 1e-12);
  CHECK(std::abs(p[0] + p[1] - 1.0) <= 1e-12);

  const std::vector<double> spread{0.05, 0.2, 0.11, 0.31, 0.02};
  std::vector<double> shifted = spread;
  for (double& v : shifted) v += 4.0;
  const auto a = softmax_probs(spread, 0.1);
  const auto b = softmax_probs(shifted, 0.1);
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    CHECK(std::abs(a[j] - b[j]) <= 1e-12);
    CHECK(a[j] > 0.0);
    sum += a[j];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-9);
  const auto cold = softmax_probs(spread, 1e-4);
  CHECK(*std::max_element(cold.begin(), cold.end()) > 1.0 - 1e-6);
  CHECK_THROWS_AS(softmax_probs(spread, 0.0), std::invalid_argument);
}

TEST_CASE("target_counts") {
  const std::vector<double> uniform(4, 0.25);
  CHECK(target_counts(uniform, 4) == std::vector<double>{1, 1, 1, 1});
  const std::vector<double> p{0.5, 0.3, 0.2};
  const auto q = target_counts(p, 10);
  CHECK(q[0] == 5.0);
  CHECK(q[1] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(q[2] == 2.0);
}

TEST_CASE("select_per_cluster") {
  SUBCASE("least prototypical member survives") {
    const auto a = make_assignment({0, 0, 0}, {0.99, 0.70, 0.40});
    const std::vector<std::int64_t> x{1};
    CHECK(select_per_cluster(a, x).ids == std::vector<std::uint64_t>{2});
  }
  SUBCASE("full allocation is the identity") {
    const auto a = make_assignment({1, 0, 1, 0, 1}, {0.1, 0.2, 0.3, 0.4, 0.5});
    const std::vector<std::int64_t> x{2, 3};
    CHECK(select_per_cluster(a, x) == SelectionMask::all(5));
  }
  SUBCASE("ties go to the lower id") {
    const auto a = make_assignment({0, 0, 0, 0}, {0.5, 0.5, 0.5, 0.2});
    const std::vector<std::int64_t> x{2};
    CHECK(select_per_cluster(a, x).ids == std::vector<std::uint64_t>{0, 3});
  }
  SUBCASE("over-allocation is an internal error") {
    const auto a = make_assignment({0, 1}, {0.5, 0.5});
    const std::vector<std::int64_t> x{2, 1};
    CHECK_THROWS_AS(select_per_cluster(a, x), std::logic_error);
  }
  SUBCASE("sort oracle on random data") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_int_distribution<std::uint32_t> lab(0, 9);
    Assignment a;
    for (int i = 0; i < 2000; ++i) {
      a.nearest_cent.push_back(lab(rng));
      // Coarse values so the tie rule gets exercised.
      a.sim_to_centroid.push_back(std::round(u(rng) * 20) / 20);
    }
    const auto members = cluster_members(a, 10);
    std::vector<std::int64_t> x(10);
    for (std::size_t j = 0; j < 10; ++j) x[j] = std::int64_t(rng() % (members[j].size() + 1));

    // Oracle: drop the M_j - x_j members with the largest sims, where among
    // equal sims the higher id is more prototypical.
    std::vector<std::uint64_t> want;
    for (std::size_t j = 0; j < 10; ++j) {
      auto ids = members[j];
      std::sort(ids.begin(), ids.end(), [&](std::size_t p, std::size_t q) {
        if (a.sim_to_centroid[p] != a.sim_to_centroid[q])
          return a.sim_to_centroid[p] > a.sim_to_centroid[q];
        return p > q;
      });
      const auto drop = ids.size() - std::size_t(x[j]);
      want.insert(want.end(), ids.begin() + drop, ids.end());
    }
    std::sort(want.begin(), want.end());
    CHECK(select_per_cluster(a, x).ids == want);
  }
}

TEST_CASE("coefficient_of_variation") {
  const std::vector<double> same{4, 4, 4};
  CHECK(coefficient_of_variation(same) == 0.0);
  const std::vector<double> v{1, 3};
  CHECK(coefficient_of_variation(v) == doctest::Approx(0.5));
}

TEST_CASE("cluster_stats skips empty clusters and caps l") {
  const auto model = unit_axes(4, 4);
  const auto a = make_assignment({0, 0, 3}, {0.9, 0.7, 1.0});
  const auto s = cluster_stats(model, a, 20, 0.1);
  CHECK(s.cluster_id == std::vector<std::uint32_t>{0, 3});
  CHECK(s.members == std::vector<std::size_t>{2, 1});
  CHECK(s.l == 1);
  CHECK(s.d_inter == std::vector<double>{1.0, 1.0});
  CHECK(s.d_intra[0] == doctest::Approx(0.2));
  CHECK(s.d_intra[1] == 0.0);
  CHECK(s.complexity[1] == 0.0);
  CHECK(s.probs[0] + s.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.probs[0] > s.probs[1]);
}

TEST_CASE("DbpConfig") {
  DbpConfig c;
  CHECK(c.k == 500);
  CHECK(c.l == 20);
  CHECK(c.tau == 0.1);
  CHECK(c.keep_fraction == 0.6);
  CHECK(c.balance_ratio == 0.0);
  CHECK_NOTHROW(c.validate());
  CHECK(c.resolve_target(1000) == 600);
  CHECK(c.resolve_target(1) == 1);
  c.target_size = 2000;
  CHECK_THROWS_AS(c.resolve_target(1000), ConfigError);
  c.target_size.reset();
  c.l = 500;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.l = 20;
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.tau = 0.1;
  c.balance_ratio = 1.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("run_dbp on an imbalanced mixture") {
  const auto mix = gen_sphere_mixture(32, kSizes, kSpreads, 99);
  DbpConfig cfg;
  cfg.k = 20;
  cfg.l = 5;
  cfg.kmeans_iters = 30;
  cfg.seed = 3;
  const auto target = cfg.resolve_target(mix.embeddings.rows());
  CHECK(target == 4680);
  const auto r = run_dbp(mix.embeddings, cfg, target);

  CHECK(r.mask.size() == target);
  CHECK(r.cv_after < r.cv_before);
  std::int64_t sum = 0;
  for (std::size_t j = 0; j < r.stats.members.size(); ++j) {
    sum += r.allocation.x_int[j];
    CHECK(r.allocation.x_int[j] >= 1);
    CHECK(r.allocation.x_int[j] <= std::int64_t(r.stats.members[j]));
    CHECK(r.stats.d_intra[j] >= 0.0);
    CHECK(r.stats.d_intra[j] <= 2.0);
    CHECK(r.stats.d_inter[j] >= 0.0);
    CHECK(r.stats.d_inter[j] <= 2.0);
    CHECK(r.stats.complexity[j] == r.stats.d_inter[j] * r.stats.d_intra[j]);
  }
  CHECK(sum == std::int64_t(target));

  // Kept members of every cluster are never more prototypical than dropped ones.
  std::vector<char> kept(mix.embeddings.rows(), 0);
  for (auto id : r.mask.ids) kept[id] = 1;
  std::vector<double> max_kept(r.model.k, -2.0), min_dropped(r.model.k, 2.0);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto c = r.assignment.nearest_cent[i];
    const double s = r.assignment.sim_to_centroid[i];
    if (kept[i])
      max_kept[c] = std::max(max_kept[c], s);
    else
      min_dropped[c] = std::min(min_dropped[c], s);
  }
  for (std::size_t j = 0; j < r.model.k; ++j) CHECK(max_kept[j] <= min_dropped[j]);

  const auto again = run_dbp(mix.embeddings, cfg, target);
  CHECK(again.mask == r.mask);
}

TEST_CASE("run_dbp rejects impossible requests") {
  const auto m = oracle::random_unit_rows(50, 4, 1);
  DbpConfig cfg;
  cfg.k = 10;
  cfg.l = 3;
  cfg.kmeans_iters = 5;
  CHECK_THROWS_AS(run_dbp(m, cfg, 5), InfeasibleError);
  CHECK_THROWS_AS(run_dbp(m, cfg, 0), ConfigError);
  cfg.k = 60;
  CHECK_THROWS_AS(run_dbp(m, cfg, 30), ConfigError);
}
