#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dbprune/errors.hpp"
#include "dbprune/semdedup.hpp"
#include "oracles.hpp"

using namespace dbprune;

namespace {

double cos_sim(const EmbeddingMatrix& m, std::size_t a, std::size_t b) {
  return std::clamp(oracle::dot(m.row(a), m.row(b)), -1.0, 1.0);
}

// Every base row appears twice: ids i and i + base.
EmbeddingMatrix duplicated_pairs(std::size_t base, std::size_t dim,
                                 std::uint64_t seed) {
  const auto b = oracle::random_unit_rows(base, dim, seed);
  std::vector<float> data(b.data().begin(), b.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return EmbeddingMatrix(2 * base, dim, std::move(data), true);
}

struct Clustered {
  EmbeddingMatrix m;
  KMeansModel model;
  Assignment a;
};

Clustered cluster(EmbeddingMatrix m, std::size_t k, std::uint64_t seed) {
  auto model = fit(m, {.k = k, .iters = 30, .seed = seed});
  auto a = assign(m, model);
  return {std::move(m), std::move(model), std::move(a)};
}

// Every dropped row has a kept row in its cluster above the threshold, and
// no two kept rows of one cluster exceed it.
void check_witnesses(const Clustered& c, const SelectionMask& kept, double t) {
  std::vector<char> is_kept(c.m.rows(), 0);
  for (auto id : kept.ids) is_kept[id] = 1;
  for (std::size_t i = 0; i < c.m.rows(); ++i) {
    bool witness = false;
    for (std::size_t j = 0; j < c.m.rows(); ++j) {
      if (i == j || c.a.nearest_cent[i] != c.a.nearest_cent[j]) continue;
      const double s = cos_sim(c.m, i, j);
      if (is_kept[i] && is_kept[j]) CHECK(s <= t);
      if (!is_kept[i] && is_kept[j] && s > t) witness = true;
    }
    if (!is_kept[i]) CHECK(witness);
  }
}

}  // namespace

TEST_CASE("DedupConfig validation") {
  DedupConfig c;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.threshold = 0.9;
  CHECK_NOTHROW(c.validate());
  c.target_keep_fraction = 0.8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.threshold.reset();
  CHECK_NOTHROW(c.validate());
  c.target_keep_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.target_keep_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dedup_cluster basics") {
  SUBCASE("identical rows keep one") {
    const auto r = oracle::random_unit_rows(1, 5, 1);
    std::vector<float> d(r.data().begin(), r.data().end());
    d.insert(d.end(), r.data().begin(), r.data().end());
    const EmbeddingMatrix two(2, 5, d, true);
    const std::vector<double> sims{0.7, 0.7};
    CHECK(dedup_cluster(two, sims, 0.9) == std::vector<std::size_t>{0});
    // Strict inequality: similarity 1 is not above threshold 1.
    CHECK(dedup_cluster(two, sims, 1.0) == std::vector<std::size_t>{0, 1});
  }
  SUBCASE("most prototypical member represents the group") {
    const auto r = oracle::random_unit_rows(1, 5, 2);
    std::vector<float> d;
    for (int i = 0; i < 3; ++i) d.insert(d.end(), r.data().begin(), r.data().end());
    const EmbeddingMatrix three(3, 5, d, true);
    const std::vector<double> sims{0.2, 0.9, 0.5};
    CHECK(dedup_cluster(three, sims, 0.5) == std::vector<std::size_t>{1});
  }
  SUBCASE("near-orthogonal rows all survive") {
    const auto rows = oracle::random_unit_rows(5, 256, 3);
    const std::vector<double> sims{0.1, 0.5, 0.3, 0.2, 0.4};
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = a + 1; b < 5; ++b) REQUIRE(cos_sim(rows, a, b) < 0.99);
    CHECK(dedup_cluster(rows, sims, 0.99).size() == 5);
  }
  SUBCASE("threshold 1 keeps everything") {
    const auto rows = oracle::random_unit_rows(40, 3, 4);
    const std::vector<double> sims(40, 0.0);
    CHECK(dedup_cluster(rows, sims, 1.0).size() == 40);
  }
  SUBCASE("greedy keep-set containment can break on a chain") {
    // Visit order A, B, C with sim(A,B) = 0.85, sim(B,C) = 0.9,
    // sim(A,C) = 0.6: C survives at 0.8 (B is dropped) but not at 0.87.
    const double ab = 0.85, bc = 0.9;
    const double b0 = ab, b1 = std::sqrt(1 - ab * ab);
    // C lives in span{e0, e1, e2} with sim(B,C) = 0.9 and sim(A,C) = 0.6.
    const double ca0 = 0.6;
    const double ca1 = (bc - b0 * ca0) / b1;
    const double ca2 = std::sqrt(1 - ca0 * ca0 - ca1 * ca1);
    const EmbeddingMatrix rows(
        3, 3,
        {1.f, 0.f, 0.f, float(b0), float(b1), 0.f, float(ca0), float(ca1),
         float(ca2)},
        true);
    const std::vector<double> sims{0.9, 0.8, 0.7};
    CHECK(dedup_cluster(rows, sims, 0.80) == std::vector<std::size_t>{0, 2});
    CHECK(dedup_cluster(rows, sims, 0.87) == std::vector<std::size_t>{0, 1});
  }
}

TEST_CASE("dedup_dataset on duplicated pairs") {
  const auto c = cluster(duplicated_pairs(150, 64, 5), 6, 1);
  CHECK(dedup_dataset(c.m, c.model, c.a, 1.0).size() == 300);

  double max_cross = -1.0;
  for (std::size_t i = 0; i < 150; ++i)
    for (std::size_t j = i + 1; j < 150; ++j)
      max_cross = std::max(max_cross, cos_sim(c.m, i, j));
  REQUIRE(max_cross < 0.95);

  const auto half = dedup_dataset(c.m, c.model, c.a, 0.5 * (max_cross + 1.0));
  REQUIRE(half.size() == 150);
  // Exact twins share sim_to_centroid, so the lower id represents the pair.
  for (std::size_t i = 0; i < 150; ++i) CHECK(half.ids[i] == i);

  SUBCASE("thread count does not matter") {
    CHECK(dedup_dataset(c.m, c.model, c.a, 0.3, 1) ==
          dedup_dataset(c.m, c.model, c.a, 0.3, 4));
  }
}

TEST_CASE("dedup witness oracle on a clustered mixture") {
  const std::vector<std::size_t> sizes{300, 250, 200, 150};
  const std::vector<double> spreads{0.3, 0.5, 0.7, 0.9};
  const auto mix = gen_sphere_mixture(16, sizes, spreads, 31);
  const auto c = cluster(mix.embeddings, 8, 2);
  for (double t : {0.5, 0.8, 0.95}) {
    const auto kept = dedup_dataset(c.m, c.model, c.a, t);
    CHECK(kept.size() < c.m.rows());
    check_witnesses(c, kept, t);

    // Deduplicating the kept rows again changes nothing.
    const auto again = subset(c.m, kept);
    Assignment sub;
    for (auto id : kept.ids) {
      sub.nearest_cent.push_back(c.a.nearest_cent[id]);
      sub.sim_to_centroid.push_back(c.a.sim_to_centroid[id]);
    }
    CHECK(dedup_dataset(again, c.model, sub, t).size() == kept.size());
  }
}

TEST_CASE("find_threshold") {
  SUBCASE("target 1 keeps everything at threshold 1") {
    const auto c = cluster(oracle::random_unit_rows(200, 8, 3), 4, 0);
    const auto r = find_threshold(c.m, c.model, c.a, 1.0, 1e-3);
    CHECK(r.threshold == 1.0);
    CHECK(r.kept == 200);
    CHECK(r.probes == 1);
  }
  SUBCASE("duplicated pairs at 0.5") {
    const auto c = cluster(duplicated_pairs(200, 64, 8), 5, 4);
    const auto r = find_threshold(c.m, c.model, c.a, 0.5, 0.0);
    CHECK(r.keep_fraction == 0.5);
    CHECK(r.threshold < 1.0);
    const auto kept = dedup_dataset(c.m, c.model, c.a, r.threshold);
    CHECK(kept.size() == 200);
  }
  SUBCASE("result reaches the target within tolerance") {
    const std::vector<std::size_t> sizes{400, 300, 300};
    const std::vector<double> spreads{0.4, 0.6, 0.8};
    const auto mix = gen_sphere_mixture(12, sizes, spreads, 6);
    const auto c = cluster(mix.embeddings, 20, 3);
    for (double target : {0.6, 0.7, 0.8}) {
      const auto r = find_threshold(c.m, c.model, c.a, target, 1e-3);
      CHECK(r.keep_fraction >= target);
      CHECK(r.keep_fraction - target <= 1e-3 + 1e-12);
      CHECK(dedup_dataset(c.m, c.model, c.a, r.threshold).size() == r.kept);
      CHECK(r.probes <= 32);
    }
  }
  SUBCASE("unreachable target reports the floor") {
    const auto c = cluster(oracle::random_unit_rows(50, 4, 1), 10, 0);
    try {
      find_threshold(c.m, c.model, c.a, 0.05, 1e-3);
      FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
      CHECK(std::string(e.what()).find("threshold -1 still keeps") !=
            std::string::npos);
    }
  }
}
