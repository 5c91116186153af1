#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dbprune/embed_store.hpp"

namespace dbprune {

/// Spherical k-means model. Centroids are kept in 64-bit precision in memory
/// and stored as 32-bit floats in the KMC1 file.
struct KMeansModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim, row-major, unit rows
  std::uint64_t seed = 0;
  std::uint32_t iters_run = 0;
  double objective = 0.0;  // mean similarity to assigned centroid

  /// Objective after the initial assignment and after every update
  /// (iters_run + 1 values). Not serialized.
  std::vector<double> objective_trace;

  std::span<const double> centroid(std::size_t j) const {
    return {centroids.data() + j * dim, dim};
  }
};

struct Assignment {
  std::vector<std::uint32_t> nearest_cent;
  std::vector<double> sim_to_centroid;

  std::size_t size() const noexcept { return nearest_cent.size(); }
};

struct FitOptions {
  std::size_t k = 0;
  std::size_t iters = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Lloyd iterations on the unit sphere, seeded from k distinct data rows.
/// Stops after `iters` centroid updates or once assignments stop changing.
KMeansModel fit(const EmbeddingMatrix& m, const FitOptions& opts);

/// Exact max-cosine assignment; ties go to the lower cluster id.
Assignment assign(const EmbeddingMatrix& m, const KMeansModel& model,
                  unsigned threads = 1);

/// For every centroid, the similarities of its l nearest other centroids,
/// in descending order.
std::vector<std::vector<double>> centroid_neighbors(const KMeansModel& model,
                                                    std::size_t l);

/// Member ids of every cluster in ascending order.
std::vector<std::vector<std::size_t>> cluster_members(const Assignment& a,
                                                      std::size_t k);

void save_model(const std::filesystem::path& path, const KMeansModel& model);
KMeansModel load_model(const std::filesystem::path& path);

}  // namespace dbprune
