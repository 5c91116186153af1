#include "dbprune/semdedup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dbprune/errors.hpp"
#include "dbprune/parallel.hpp"

namespace dbprune {
namespace {

// Packed lower-triangular similarity caches are used by the threshold
// search while their total size stays under this many entries.
constexpr std::size_t kGramBudget = std::size_t{1} << 26;

double cosine(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) s += double(a[d]) * double(b[d]);
  return std::clamp(s, -1.0, 1.0);
}

// Positions 0..n-1 sorted by descending similarity, ties to lower position.
std::vector<std::size_t> visit_order(std::span<const double> sims) {
  std::vector<std::size_t> order(sims.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sims[a] > sims[b];
  });
  return order;
}

// Greedy pass over `n` rows in visit order; sim(a, b) takes visit positions.
// Returns kept visit positions.
template <typename Sim>
std::vector<std::size_t> greedy_keep(std::size_t n, double threshold, Sim&& sim) {
  std::vector<std::size_t> kept;
  for (std::size_t p = 0; p < n; ++p) {
    bool duplicate = false;
    for (auto q : kept) {
      if (sim(p, q) > threshold) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(p);
  }
  return kept;
}

// Cluster members of `m` in visit order.
struct DedupPlan {
  std::vector<std::vector<std::size_t>> rows;  // global row ids, visit order
};

DedupPlan make_plan(const EmbeddingMatrix& m, const KMeansModel& model,
                    const Assignment& a) {
  if (a.size() != m.rows())
    throw std::invalid_argument("dedup: assignment covers " +
                                std::to_string(a.size()) + " rows, matrix has " +
                                std::to_string(m.rows()));
  if (m.dim() != model.dim)
    throw std::invalid_argument("dedup: embedding dim does not match model");
  if (!m.normalized())
    throw std::invalid_argument("dedup: embeddings must be unit-normalized");
  DedupPlan plan;
  plan.rows = cluster_members(a, model.k);
  for (auto& members : plan.rows) {
    std::vector<double> sims;
    sims.reserve(members.size());
    for (auto i : members) sims.push_back(a.sim_to_centroid[i]);
    const auto order = visit_order(sims);
    std::vector<std::size_t> sorted;
    sorted.reserve(members.size());
    for (auto p : order) sorted.push_back(members[p]);
    members = std::move(sorted);
  }
  return plan;
}

std::vector<std::size_t> keep_cluster(const EmbeddingMatrix& m,
                                      const std::vector<std::size_t>& rows,
                                      double threshold) {
  const auto kept = greedy_keep(rows.size(), threshold, [&](auto p, auto q) {
    return cosine(m.row(rows[p]), m.row(rows[q]));
  });
  std::vector<std::size_t> out;
  out.reserve(kept.size());
  for (auto p : kept) out.push_back(rows[p]);
  return out;
}

SelectionMask run_plan(const EmbeddingMatrix& m, const DedupPlan& plan,
                       double threshold, unsigned threads) {
  std::vector<std::vector<std::size_t>> kept(plan.rows.size());
  parallel_for(plan.rows.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t c = b; c < e; ++c)
      kept[c] = keep_cluster(m, plan.rows[c], threshold);
  });
  SelectionMask mask;
  for (const auto& k : kept) mask.ids.insert(mask.ids.end(), k.begin(), k.end());
  std::sort(mask.ids.begin(), mask.ids.end());
  return mask;
}

// Per-cluster similarity caches for repeated threshold probes.
class GramCache {
 public:
  GramCache(const EmbeddingMatrix& m, const DedupPlan& plan, unsigned threads)
      : plan_(plan) {
    grams_.resize(plan.rows.size());
    parallel_for(plan.rows.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t c = b; c < e; ++c) {
        const auto& rows = plan.rows[c];
        auto& g = grams_[c];
        g.resize(rows.size() * (rows.size() + 1) / 2);
        for (std::size_t p = 0; p < rows.size(); ++p)
          for (std::size_t q = 0; q <= p; ++q)
            g[p * (p + 1) / 2 + q] = cosine(m.row(rows[p]), m.row(rows[q]));
      }
    });
  }

  static bool fits(const DedupPlan& plan) {
    std::size_t total = 0;
    for (const auto& r : plan.rows) total += r.size() * (r.size() + 1) / 2;
    return total <= kGramBudget;
  }

  std::size_t count_kept(double threshold, unsigned threads) const {
    std::vector<std::size_t> counts(grams_.size(), 0);
    parallel_for(grams_.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t c = b; c < e; ++c) {
        const auto& g = grams_[c];
        counts[c] = greedy_keep(plan_.rows[c].size(), threshold,
                                [&](std::size_t p, std::size_t q) {
                                  return g[p * (p + 1) / 2 + q];
                                })
                        .size();
      }
    });
    return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  }

 private:
  const DedupPlan& plan_;
  std::vector<std::vector<double>> grams_;
};

}  // namespace

void DedupConfig::validate() const {
  if (threshold.has_value() == target_keep_fraction.has_value())
    throw ConfigError(
        "dedup: set exactly one of threshold / target_keep_fraction");
  if (threshold && !(*threshold >= -1.0 && *threshold <= 1.0))
    throw ConfigError("dedup: threshold must be in [-1, 1]");
  if (target_keep_fraction &&
      !(*target_keep_fraction > 0.0 && *target_keep_fraction <= 1.0))
    throw ConfigError("dedup: target_keep_fraction must be in (0, 1]");
  if (k_dedup < 1) throw ConfigError("dedup: k must be >= 1");
}

std::vector<std::size_t> dedup_cluster(const EmbeddingMatrix& cluster_rows,
                                       std::span<const double> sims_to_centroid,
                                       double threshold) {
  if (sims_to_centroid.size() != cluster_rows.rows())
    throw std::invalid_argument("dedup_cluster: sims length mismatch");
  if (!cluster_rows.normalized())
    throw std::invalid_argument("dedup_cluster: rows must be unit-normalized");
  const auto order = visit_order(sims_to_centroid);
  auto kept = keep_cluster(cluster_rows, order, threshold);
  std::sort(kept.begin(), kept.end());
  return kept;
}

SelectionMask dedup_dataset(const EmbeddingMatrix& m, const KMeansModel& model,
                            const Assignment& assignment, double threshold,
                            unsigned threads) {
  const auto plan = make_plan(m, model, assignment);
  return run_plan(m, plan, threshold, threads);
}

ThresholdSearch find_threshold(const EmbeddingMatrix& m,
                               const KMeansModel& model,
                               const Assignment& assignment, double target,
                               double tol, unsigned threads) {
  if (!(target > 0.0 && target <= 1.0))
    throw std::invalid_argument("find_threshold: target must be in (0, 1]");
  if (!(tol >= 0.0)) throw std::invalid_argument("find_threshold: tol < 0");

  const auto plan = make_plan(m, model, assignment);
  std::optional<GramCache> cache;
  if (GramCache::fits(plan)) cache.emplace(m, plan, threads);

  const double n = static_cast<double>(m.rows());
  ThresholdSearch out;
  auto count = [&](double t) {
    ++out.probes;
    return cache ? cache->count_kept(t, threads)
                 : run_plan(m, plan, t, threads).size();
  };
  auto close_enough = [&](std::size_t kept) {
    return static_cast<double>(kept) / n - target <= tol;
  };

  double hi = 1.0;
  std::size_t kept_hi = count(hi);
  if (!close_enough(kept_hi)) {
    double lo = -1.0;
    const std::size_t kept_lo = count(lo);
    if (static_cast<double>(kept_lo) / n >= target) {
      if (!close_enough(kept_lo))
        throw InfeasibleError(
            "dedup target keep fraction " + std::to_string(target) +
            " unreachable: threshold -1 still keeps " +
            std::to_string(static_cast<double>(kept_lo) / n));
      hi = lo;
      kept_hi = kept_lo;
    } else {
      for (int it = 0; it < 30 && !close_enough(kept_hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        const std::size_t kept = count(mid);
        if (static_cast<double>(kept) / n >= target) {
          hi = mid;
          kept_hi = kept;
        } else {
          lo = mid;
        }
      }
    }
  }
  out.threshold = hi;
  out.kept = kept_hi;
  out.keep_fraction = static_cast<double>(kept_hi) / n;
  return out;
}

}  // namespace dbprune
