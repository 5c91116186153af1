#include "dbprune/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "dbprune/errors.hpp"
#include "dbprune/parallel.hpp"
#include "dbprune/sph_kmeans.hpp"

namespace dbprune {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (!v.empty() && std::all_of(v.begin(), v.end(), [](unsigned char c) {
        return std::isdigit(c);
      })) {
    try {
      return std::stoull(v);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" +
                    v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base,
                              const std::string& v) {
  std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Runs one stage, prefixing any failure with the stage name while keeping
// its exit code.
template <typename Fn>
auto run_stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + name + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("stage " + name + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error("stage " + name + ": " + e.what());
  }
}

void require_nonempty(const std::string& stage, const SelectionMask& mask) {
  if (mask.empty())
    throw EmptySelectionError("stage " + stage + " selected no examples");
}

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value,
                         const std::filesystem::path& base_dir) {
  const std::string& v = value;
  if (key == "embeddings") {
    embeddings = resolve(base_dir, v);
  } else if (key == "scores") {
    scores = resolve(base_dir, v);
  } else if (key == "output") {
    output_dir = resolve(base_dir, v);
  } else if (key == "seed") {
    seed = parse_uint(key, v);
  } else if (key == "threads") {
    threads = static_cast<unsigned>(parse_uint(key, v));
  } else if (key == "deterministic") {
    deterministic = parse_bool(key, v);
  } else if (key == "dedup.enabled") {
    dedup.enabled = parse_bool(key, v);
  } else if (key == "dedup.k") {
    dedup.config.k_dedup = parse_uint(key, v);
  } else if (key == "dedup.threshold") {
    dedup.config.threshold = parse_double(key, v);
  } else if (key == "dedup.target_keep_fraction") {
    dedup.config.target_keep_fraction = parse_double(key, v);
  } else if (key == "dedup.kmeans_iters") {
    dedup.kmeans_iters = parse_uint(key, v);
  } else if (key == "dedup.tol") {
    dedup.search_tol = parse_double(key, v);
  } else if (key == "score.enabled") {
    score.enabled = parse_bool(key, v);
  } else if (key == "score.mode") {
    if (v == "threshold") {
      score.config.mode = ScoreFilterConfig::Mode::kAbsoluteThreshold;
    } else if (v == "top_fraction") {
      score.config.mode = ScoreFilterConfig::Mode::kTopFraction;
    } else {
      throw ConfigError("config: score.mode must be threshold or top_fraction");
    }
  } else if (key == "score.threshold") {
    score.config.threshold = parse_double(key, v);
  } else if (key == "score.fraction") {
    score.config.fraction = parse_double(key, v);
  } else if (key == "dbp.enabled") {
    dbp.enabled = parse_bool(key, v);
  } else if (key == "dbp.k") {
    dbp.config.k = parse_uint(key, v);
  } else if (key == "dbp.l") {
    dbp.config.l = parse_uint(key, v);
  } else if (key == "dbp.tau") {
    dbp.config.tau = parse_double(key, v);
  } else if (key == "dbp.n") {
    dbp.config.target_size = parse_uint(key, v);
  } else if (key == "dbp.keep_fraction") {
    dbp.config.keep_fraction = parse_double(key, v);
  } else if (key == "dbp.balance_ratio") {
    dbp.config.balance_ratio = parse_double(key, v);
  } else if (key == "dbp.kmeans_iters") {
    dbp.config.kmeans_iters = parse_uint(key, v);
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

PipelineConfig PipelineConfig::parse(std::istream& in,
                                     const std::filesystem::path& base_dir) {
  PipelineConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key or value");
    cfg.set(key, value, base_dir);
  }
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  return parse(in, path.parent_path());
}

void PipelineConfig::validate() const {
  if (dedup.enabled) {
    dedup.config.validate();
    if (dedup.kmeans_iters < 1)
      throw ConfigError("dedup: kmeans_iters must be >= 1");
    if (!(dedup.search_tol >= 0.0))
      throw ConfigError("dedup: tol must be >= 0");
  }
  if (score.enabled) score.config.validate();
  if (dbp.enabled) dbp.config.validate();
}

unsigned PipelineConfig::effective_threads() const {
  return deterministic ? 1u : resolve_threads(threads);
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  config.validate();
  if (config.embeddings.empty())
    throw ConfigError("config: embeddings path missing");
  if (config.score.enabled && config.scores.empty())
    throw ConfigError("config: score stage needs a scores path");
  const auto embeddings = load_embeddings(config.embeddings);
  std::optional<ScoreArray> scores;
  if (config.score.enabled) {
    scores = load_scores(config.scores);
    if (scores->rows() != embeddings.rows())
      throw FormatError("scores hold " + std::to_string(scores->rows()) +
                        " rows, embeddings " + std::to_string(embeddings.rows()));
  }
  auto result = run_pipeline(config, embeddings, scores ? &*scores : nullptr);
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    for (const auto& [name, mask] : result.stage_masks)
      write_mask(config.output_dir / (name + ".mask"), mask);
    write_mask(config.output_dir / "final.mask", result.final_mask);
    emit_report(config.output_dir, result.reports,
                result.dbp ? &*result.dbp : nullptr);
  }
  return result;
}

PipelineResult run_pipeline(const PipelineConfig& config,
                            const EmbeddingMatrix& embeddings,
                            const ScoreArray* scores) {
  config.validate();
  const unsigned threads = config.effective_threads();
  const auto normalized = run_stage("load", [&] {
    return normalize_rows(embeddings, threads);
  });

  PipelineResult result;
  SelectionMask current = SelectionMask::all(normalized.rows());

  if (config.dedup.enabled) {
    const auto t0 = std::chrono::steady_clock::now();
    StageReport rep{"dedup", current.size(), 0, 0.0, {}};
    current = run_stage("dedup", [&] {
      const auto& dc = config.dedup.config;
      const auto seed = config.seed + static_cast<std::uint64_t>(Stage::kDedup);
      const auto rows = subset(normalized, current);
      if (dc.k_dedup > rows.rows())
        throw ConfigError("dedup: k = " + std::to_string(dc.k_dedup) +
                          " exceeds the " + std::to_string(rows.rows()) +
                          " available rows");
      const auto model =
          fit(rows, FitOptions{dc.k_dedup, config.dedup.kmeans_iters, seed, threads});
      const auto a = assign(rows, model, threads);
      double threshold;
      if (dc.threshold) {
        threshold = *dc.threshold;
      } else {
        const auto search = find_threshold(rows, model, a, *dc.target_keep_fraction,
                                           config.dedup.search_tol, threads);
        threshold = search.threshold;
        rep.metrics.emplace_back("threshold_probes", std::to_string(search.probes));
      }
      const auto local = dedup_dataset(rows, model, a, threshold, threads);
      rep.metrics.emplace_back("threshold", num(threshold));
      rep.metrics.emplace_back(
          "keep_fraction",
          num(static_cast<double>(local.size()) / static_cast<double>(rows.rows())));
      rep.metrics.emplace_back("clusters", std::to_string(model.k));
      rep.metrics.emplace_back("kmeans_iters_run", std::to_string(model.iters_run));
      return compose(current, local);
    });
    require_nonempty("dedup", current);
    rep.output_size = current.size();
    rep.wall_seconds = seconds_since(t0);
    result.reports.push_back(std::move(rep));
    result.stage_masks.emplace_back("dedup", current);
  }

  if (config.score.enabled) {
    const auto t0 = std::chrono::steady_clock::now();
    StageReport rep{"score", current.size(), 0, 0.0, {}};
    current = run_stage("score", [&] {
      if (!scores) throw ConfigError("score stage enabled without scores");
      if (scores->rows() != normalized.rows())
        throw FormatError("score count does not match embedding rows");
      const auto local =
          apply_score_filter(subset(*scores, current), config.score.config);
      rep.metrics.emplace_back("mode", config.score.config.mode ==
                                               ScoreFilterConfig::Mode::kTopFraction
                                           ? "top_fraction"
                                           : "threshold");
      rep.metrics.emplace_back("kept", std::to_string(local.mask.size()));
      rep.metrics.emplace_back("cut_score", num(local.cut_score));
      return compose(current, local.mask);
    });
    require_nonempty("score", current);
    rep.output_size = current.size();
    rep.wall_seconds = seconds_since(t0);
    result.reports.push_back(std::move(rep));
    result.stage_masks.emplace_back("score", current);
  }

  if (config.dbp.enabled) {
    const auto t0 = std::chrono::steady_clock::now();
    StageReport rep{"dbp", current.size(), 0, 0.0, {}};
    current = run_stage("dbp", [&] {
      auto dc = config.dbp.config;
      dc.seed = config.seed + static_cast<std::uint64_t>(Stage::kDbp);
      const auto rows = subset(normalized, current);
      const auto target = dc.resolve_target(rows.rows());
      auto r = run_dbp(rows, dc, target, threads);
      rep.metrics.emplace_back("target", std::to_string(target));
      rep.metrics.emplace_back("clusters", std::to_string(r.model.k));
      rep.metrics.emplace_back("nonempty_clusters",
                               std::to_string(r.stats.cluster_id.size()));
      rep.metrics.emplace_back("l", std::to_string(r.stats.l));
      rep.metrics.emplace_back("tau", num(dc.tau));
      rep.metrics.emplace_back("balance_ratio", num(dc.balance_ratio));
      rep.metrics.emplace_back("lambda", num(r.allocation.lambda));
      rep.metrics.emplace_back("kmeans_iters_run", std::to_string(r.model.iters_run));
      rep.metrics.emplace_back("kmeans_objective", num(r.model.objective));
      rep.metrics.emplace_back("cv_cluster_sizes_before", num(r.cv_before));
      rep.metrics.emplace_back("cv_cluster_sizes_after", num(r.cv_after));
      auto global = compose(current, r.mask);
      result.dbp = std::move(r);
      return global;
    });
    require_nonempty("dbp", current);
    rep.output_size = current.size();
    rep.wall_seconds = seconds_since(t0);
    result.reports.push_back(std::move(rep));
    result.stage_masks.emplace_back("dbp", current);
  }

  result.final_mask = std::move(current);
  return result;
}

void write_summary(std::ostream& out, const std::vector<StageReport>& reports) {
  for (const auto& r : reports) {
    out << '[' << r.stage << "]\n";
    out << "input_size = " << r.input_size << '\n';
    out << "output_size = " << r.output_size << '\n';
    out << "wall_seconds = " << num(r.wall_seconds) << '\n';
    for (const auto& [k, v] : r.metrics) out << k << " = " << v << '\n';
    out << '\n';
  }
}

void write_cluster_csv(std::ostream& out, const DbpResult& dbp) {
  out << "cluster_id,M_j,d_inter,d_intra,C_j,P_j,q_j,x_real,x_int\n";
  const auto& s = dbp.stats;
  for (std::size_t j = 0; j < s.cluster_id.size(); ++j) {
    out << s.cluster_id[j] << ',' << s.members[j] << ',' << num(s.d_inter[j])
        << ',' << num(s.d_intra[j]) << ',' << num(s.complexity[j]) << ','
        << num(s.probs[j]) << ',' << num(dbp.problem.q[j]) << ','
        << num(dbp.allocation.x_real[j]) << ',' << dbp.allocation.x_int[j]
        << '\n';
  }
}

void emit_report(const std::filesystem::path& dir,
                 const std::vector<StageReport>& reports,
                 const DbpResult* dbp) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream summary(dir / "summary.txt", std::ios::trunc);
  if (!summary) throw std::runtime_error("cannot write report in " + dir.string());
  write_summary(summary, reports);
  if (dbp) {
    std::ofstream csv(dir / "dbp_clusters.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write report in " + dir.string());
    write_cluster_csv(csv, *dbp);
  }
}

}  // namespace dbprune
