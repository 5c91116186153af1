#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dbprune/dbp_core.hpp"
#include "dbprune/embed_store.hpp"
#include "dbprune/score_filter.hpp"
#include "dbprune/semdedup.hpp"

namespace dbprune {

/// Line-oriented `key = value` configuration with '#' comments and dotted
/// stage prefixes, e.g. `dbp.tau = 0.1`.
struct PipelineConfig {
  std::filesystem::path embeddings;
  std::filesystem::path scores;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool deterministic = false;

  struct Dedup {
    bool enabled = false;
    DedupConfig config;
    std::size_t kmeans_iters = 100;
    double search_tol = 1e-3;
  } dedup;

  struct Score {
    bool enabled = false;
    ScoreFilterConfig config;
  } score;

  struct Dbp {
    bool enabled = false;
    DbpConfig config;
  } dbp;

  /// Throws ConfigError on unknown keys or malformed values. Relative paths
  /// are resolved against `base_dir`.
  static PipelineConfig parse(std::istream& in,
                              const std::filesystem::path& base_dir = {});
  static PipelineConfig from_file(const std::filesystem::path& path);

  /// Applies one `key = value` setting.
  void set(const std::string& key, const std::string& value,
           const std::filesystem::path& base_dir = {});

  void validate() const;

  /// Worker count after applying `deterministic` and the 0 = auto rule.
  unsigned effective_threads() const;
};

/// Stage seeds are the config seed salted with the stage index.
enum class Stage : std::uint64_t { kDedup = 0, kScore = 1, kDbp = 2 };

struct StageReport {
  std::string stage;
  std::size_t input_size = 0;
  std::size_t output_size = 0;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> metrics;
};

struct PipelineResult {
  SelectionMask final_mask;
  /// (stage name, mask over the original dataset) per executed stage.
  std::vector<std::pair<std::string, SelectionMask>> stage_masks;
  std::vector<StageReport> reports;
  std::optional<DbpResult> dbp;
};

/// Runs dedup -> score filter -> DBP on the configured inputs; each enabled
/// stage consumes the previous stage's mask. When output_dir is set, every
/// mask and report is written there.
PipelineResult run_pipeline(const PipelineConfig& config);

/// Same as above on in-memory inputs; `scores` may be null when the score
/// stage is disabled.
PipelineResult run_pipeline(const PipelineConfig& config,
                            const EmbeddingMatrix& embeddings,
                            const ScoreArray* scores);

/// summary.txt holds every stage report; dbp_clusters.csv holds one row per
/// non-empty DBP cluster.
void emit_report(const std::filesystem::path& dir,
                 const std::vector<StageReport>& reports,
                 const DbpResult* dbp);

void write_summary(std::ostream& out, const std::vector<StageReport>& reports);
void write_cluster_csv(std::ostream& out, const DbpResult& dbp);

}  // namespace dbprune
