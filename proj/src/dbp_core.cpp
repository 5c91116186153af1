#include "dbprune/dbp_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "dbprune/errors.hpp"

namespace dbprune {

void DbpConfig::validate() const {
  if (k < 2) throw ConfigError("dbp: k must be >= 2");
  if (l < 1 || l > k - 1)
    throw ConfigError("dbp: l must be in [1, k - 1]");
  if (!(tau > 0.0)) throw ConfigError("dbp: tau must be > 0");
  if (target_size && *target_size < 1)
    throw ConfigError("dbp: target size must be >= 1");
  if (!target_size && !(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw ConfigError("dbp: keep_fraction must be in (0, 1]");
  if (!(balance_ratio >= 0.0 && balance_ratio <= 1.0))
    throw ConfigError("dbp: balance_ratio must be in [0, 1]");
  if (kmeans_iters < 1) throw ConfigError("dbp: kmeans_iters must be >= 1");
}

std::size_t DbpConfig::resolve_target(std::size_t rows) const {
  if (target_size) {
    if (*target_size > rows)
      throw ConfigError("dbp: target size " + std::to_string(*target_size) +
                        " exceeds the " + std::to_string(rows) +
                        " available rows");
    return *target_size;
  }
  const auto n = static_cast<std::size_t>(
      std::llround(keep_fraction * static_cast<double>(rows)));
  return std::clamp<std::size_t>(n, 1, rows);
}

std::vector<double> compute_d_intra(const Assignment& assignment,
                                    std::size_t k) {
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const auto c = assignment.nearest_cent[i];
    if (c >= k)
      throw std::invalid_argument("d_intra: cluster id out of range");
    sum[c] += 1.0 - assignment.sim_to_centroid[i];
    ++count[c];
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (count[j] == 0)
      throw std::invalid_argument("d_intra: cluster " + std::to_string(j) +
                                  " is empty");
    sum[j] /= static_cast<double>(count[j]);
  }
  return sum;
}

std::vector<double> compute_d_inter(const KMeansModel& model, std::size_t l) {
  const auto neighbors = centroid_neighbors(model, l);
  std::vector<double> out;
  out.reserve(neighbors.size());
  for (const auto& sims : neighbors) {
    double s = 0.0;
    for (double v : sims) s += 1.0 - v;
    out.push_back(s / static_cast<double>(sims.size()));
  }
  return out;
}

std::vector<double> complexity(std::span<const double> d_inter,
                               std::span<const double> d_intra) {
  if (d_inter.size() != d_intra.size())
    throw std::invalid_argument("complexity: d_inter and d_intra lengths differ");
  std::vector<double> c(d_inter.size());
  for (std::size_t j = 0; j < c.size(); ++j) c[j] = d_inter[j] * d_intra[j];
  return c;
}

std::vector<double> softmax_probs(std::span<const double> c, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softmax: tau must be > 0");
  if (c.empty()) return {};
  const double cmax = *std::max_element(c.begin(), c.end());
  std::vector<double> p(c.size());
  double z = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j) {
    p[j] = std::exp((c[j] - cmax) / tau);
    z += p[j];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> target_counts(std::span<const double> probs, double n) {
  std::vector<double> q(probs.size());
  for (std::size_t j = 0; j < q.size(); ++j) q[j] = probs[j] * n;
  return q;
}

SelectionMask select_per_cluster(const Assignment& assignment,
                                 std::span<const std::int64_t> per_cluster) {
  auto members = cluster_members(assignment, per_cluster.size());
  SelectionMask mask;
  for (std::size_t j = 0; j < members.size(); ++j) {
    auto& ids = members[j];
    const auto want = per_cluster[j];
    if (want < 0 || static_cast<std::size_t>(want) > ids.size())
      throw std::logic_error("select_per_cluster: cluster " + std::to_string(j) +
                             " asked for " + std::to_string(want) + " of " +
                             std::to_string(ids.size()) + " members");
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      return assignment.sim_to_centroid[a] < assignment.sim_to_centroid[b];
    });
    mask.ids.insert(mask.ids.end(), ids.begin(), ids.begin() + want);
  }
  std::sort(mask.ids.begin(), mask.ids.end());
  return mask;
}

double coefficient_of_variation(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= n;
  return mean == 0.0 ? 0.0 : std::sqrt(var) / mean;
}

ClusterStats cluster_stats(const KMeansModel& model,
                           const Assignment& assignment, std::size_t l,
                           double tau) {
  std::vector<std::size_t> counts(model.k, 0);
  for (auto c : assignment.nearest_cent) {
    if (c >= model.k)
      throw std::invalid_argument("cluster_stats: cluster id out of range");
    ++counts[c];
  }

  // Compact the model and assignment down to non-empty clusters.
  ClusterStats stats;
  std::vector<std::uint32_t> remap(model.k, 0);
  KMeansModel compact;
  compact.dim = model.dim;
  for (std::size_t j = 0; j < model.k; ++j) {
    if (counts[j] == 0) continue;
    remap[j] = static_cast<std::uint32_t>(stats.cluster_id.size());
    stats.cluster_id.push_back(static_cast<std::uint32_t>(j));
    stats.members.push_back(counts[j]);
    const auto c = model.centroid(j);
    compact.centroids.insert(compact.centroids.end(), c.begin(), c.end());
  }
  compact.k = stats.cluster_id.size();
  if (compact.k == 0) throw EmptySelectionError("cluster_stats: no members");
  Assignment relabeled = assignment;
  for (auto& c : relabeled.nearest_cent) c = remap[c];

  stats.tau = tau;
  stats.l = std::min(l, compact.k - 1);
  stats.d_intra = compute_d_intra(relabeled, compact.k);
  stats.d_inter = stats.l == 0 ? std::vector<double>(compact.k, 0.0)
                               : compute_d_inter(compact, stats.l);
  stats.complexity = complexity(stats.d_inter, stats.d_intra);
  stats.probs = softmax_probs(stats.complexity, tau);
  return stats;
}

DbpResult run_dbp(const EmbeddingMatrix& m, const DbpConfig& config,
                  std::size_t target, unsigned threads) {
  config.validate();
  if (target < 1 || target > m.rows())
    throw ConfigError("dbp: target size " + std::to_string(target) +
                      " outside [1, " + std::to_string(m.rows()) + "]");
  if (config.k > m.rows())
    throw ConfigError("dbp: k = " + std::to_string(config.k) + " exceeds the " +
                      std::to_string(m.rows()) + " available rows");

  DbpResult r;
  r.target = target;
  r.model = fit(m, FitOptions{config.k, config.kmeans_iters, config.seed, threads});
  r.assignment = assign(m, r.model, threads);
  r.stats = cluster_stats(r.model, r.assignment, config.l, config.tau);

  const auto q = target_counts(r.stats.probs, static_cast<double>(target));
  r.problem = with_balance_ratio(
      AllocationProblem::for_clusters(q, r.stats.members, target),
      config.balance_ratio);
  r.allocation = allocate(r.problem);

  std::vector<std::int64_t> per_cluster(r.model.k, 0);
  for (std::size_t j = 0; j < r.stats.cluster_id.size(); ++j)
    per_cluster[r.stats.cluster_id[j]] = r.allocation.x_int[j];
  r.mask = select_per_cluster(r.assignment, per_cluster);

  std::vector<double> before(r.stats.members.begin(), r.stats.members.end());
  std::vector<double> after(r.allocation.x_int.begin(), r.allocation.x_int.end());
  r.cv_before = coefficient_of_variation(before);
  r.cv_after = coefficient_of_variation(after);
  return r;
}

}  // namespace dbprune
