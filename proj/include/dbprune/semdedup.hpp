#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dbprune/embed_store.hpp"
#include "dbprune/sph_kmeans.hpp"

namespace dbprune {

/// Exactly one of `threshold` / `target_keep_fraction` drives a run.
struct DedupConfig {
  std::optional<double> threshold;
  std::optional<double> target_keep_fraction;
  std::size_t k_dedup = 100;

  void validate() const;
};

/// Greedy intra-cluster deduplication. Members are visited by descending
/// similarity to the centroid (ties: lower index first); a member is kept
/// unless it has cosine similarity > threshold to an already kept member.
/// Returns kept local row indices in ascending order.
std::vector<std::size_t> dedup_cluster(const EmbeddingMatrix& cluster_rows,
                                       std::span<const double> sims_to_centroid,
                                       double threshold);

/// Runs dedup_cluster on every cluster of `assignment` and returns the kept
/// row indices of `m` (ascending).
SelectionMask dedup_dataset(const EmbeddingMatrix& m, const KMeansModel& model,
                            const Assignment& assignment, double threshold,
                            unsigned threads = 1);

struct ThresholdSearch {
  double threshold = 1.0;
  double keep_fraction = 1.0;
  std::size_t kept = 0;
  std::size_t probes = 0;
};

/// Bisection on the threshold for the smallest probed value whose keep
/// fraction reaches `target`. Throws InfeasibleError when even threshold
/// -1 keeps more than the target (the floor is reported in the message).
ThresholdSearch find_threshold(const EmbeddingMatrix& m,
                               const KMeansModel& model,
                               const Assignment& assignment, double target,
                               double tol, unsigned threads = 1);

}  // namespace dbprune
