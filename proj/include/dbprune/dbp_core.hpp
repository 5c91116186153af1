#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dbprune/embed_store.hpp"
#include "dbprune/qp_alloc.hpp"
#include "dbprune/sph_kmeans.hpp"

namespace dbprune {

struct DbpConfig {
  std::size_t k = 500;
  std::size_t l = 20;
  double tau = 0.1;
  /// Absolute target size; takes precedence over keep_fraction.
  std::optional<std::size_t> target_size;
  double keep_fraction = 0.6;
  double balance_ratio = 0.0;
  std::size_t kmeans_iters = 100;
  std::uint64_t seed = 0;

  void validate() const;

  /// N for a dataset of `rows` examples: target_size, or
  /// round(keep_fraction * rows) clamped to [1, rows].
  std::size_t resolve_target(std::size_t rows) const;
};

/// Per-cluster statistics over the non-empty clusters of a model.
struct ClusterStats {
  std::vector<std::uint32_t> cluster_id;  // id in the fitted model
  std::vector<std::size_t> members;       // M_j
  std::vector<double> d_intra;
  std::vector<double> d_inter;
  std::vector<double> complexity;
  std::vector<double> probs;
  std::size_t l = 0;  // neighbors actually used for d_inter
  double tau = 0.0;
};

/// Mean of (1 - sim_to_centroid) over each cluster's members. Throws if a
/// cluster in [0, k) has no members.
std::vector<double> compute_d_intra(const Assignment& assignment, std::size_t k);

/// Mean of (1 - similarity) to the l nearest other centroids.
std::vector<double> compute_d_inter(const KMeansModel& model, std::size_t l);

/// Elementwise d_inter * d_intra.
std::vector<double> complexity(std::span<const double> d_inter,
                               std::span<const double> d_intra);

/// Max-shifted softmax of C / tau.
std::vector<double> softmax_probs(std::span<const double> c, double tau);

/// q_j = P_j * N.
std::vector<double> target_counts(std::span<const double> probs, double n);

/// Keeps the x_j members with the lowest similarity to their centroid in
/// every cluster (ties: lower id). `per_cluster` is indexed by cluster id.
/// Returns row indices of the assignment in ascending order.
SelectionMask select_per_cluster(const Assignment& assignment,
                                 std::span<const std::int64_t> per_cluster);

/// Population coefficient of variation (stddev / mean).
double coefficient_of_variation(std::span<const double> values);

struct DbpResult {
  SelectionMask mask;  // row indices into the input matrix
  KMeansModel model;
  Assignment assignment;
  ClusterStats stats;
  AllocationProblem problem;
  Allocation allocation;  // indexed like stats
  std::size_t target = 0;
  double cv_before = 0.0;
  double cv_after = 0.0;
};

/// Full density-based pruning of a normalized matrix down to `target` rows:
/// cluster, score cluster complexity, allocate with the QP, then keep the
/// least prototypical members of every cluster.
DbpResult run_dbp(const EmbeddingMatrix& m, const DbpConfig& config,
                  std::size_t target, unsigned threads = 1);

/// Cluster statistics for an already fitted model and its assignment.
/// Empty clusters are skipped; l is capped at (non-empty clusters - 1).
ClusterStats cluster_stats(const KMeansModel& model,
                           const Assignment& assignment, std::size_t l,
                           double tau);

}  // namespace dbprune
