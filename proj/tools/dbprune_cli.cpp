// dbprune: command-line front end for embedding-dataset pruning.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dbprune/dbp_core.hpp"
#include "dbprune/embed_store.hpp"
#include "dbprune/errors.hpp"
#include "dbprune/parallel.hpp"
#include "dbprune/pipeline.hpp"
#include "dbprune/qp_alloc.hpp"
#include "dbprune/score_filter.hpp"
#include "dbprune/semdedup.hpp"
#include "dbprune/sph_kmeans.hpp"

namespace fs = std::filesystem;
using namespace dbprune;

namespace {

struct GlobalFlags {
  std::string config;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool deterministic = false;
  std::string output = ".";

  unsigned workers() const {
    return deterministic ? 1u : resolve_threads(threads);
  }
  fs::path out(const std::string& name) const { return fs::path(output) / name; }
};

EmbeddingMatrix load_normalized(const std::string& path, unsigned threads) {
  return normalize_rows(load_embeddings(path), threads);
}

template <typename Fn>
double time_it(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void ensure_dir(const fs::path& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset pruning for embedding-indexed corpora"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "Pipeline config file");
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed");
  auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  auto* det_opt = app.add_flag("--deterministic", g.deterministic,
                               "Single-threaded, bitwise reproducible mode");
  auto* out_opt = app.add_option("--output", g.output, "Output directory");

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic EMB1/SCR1 fixture");
  std::size_t gen_dim = 64;
  std::vector<std::size_t> gen_sizes{5000, 2000, 500, 200, 100};
  std::vector<double> gen_spreads;
  gen->add_option("--dim", gen_dim, "Embedding dimension");
  gen->add_option("--sizes", gen_sizes, "Per-cluster sizes")->delimiter(',');
  gen->add_option("--spreads", gen_spreads, "Per-cluster spreads in [0, 1]")
      ->delimiter(',');

  // kmeans
  auto* km = app.add_subcommand("kmeans", "Fit spherical k-means");
  std::string km_input;
  std::size_t km_k = 100, km_iters = 100;
  km->add_option("--input", km_input, "EMB1 file")->required();
  km->add_option("--k", km_k, "Cluster count");
  km->add_option("--iters", km_iters, "Lloyd iterations");

  // dedup
  auto* dd = app.add_subcommand("dedup", "Semantic deduplication");
  std::string dd_input;
  std::size_t dd_k = 100, dd_iters = 100;
  std::optional<double> dd_threshold, dd_target;
  double dd_tol = 1e-3;
  dd->add_option("--input", dd_input, "EMB1 file")->required();
  dd->add_option("--k", dd_k, "Clusters for the dedup stage");
  dd->add_option("--iters", dd_iters, "k-means iterations");
  auto* dd_thr_opt = dd->add_option("--threshold", dd_threshold, "Similarity threshold");
  dd->add_option("--target", dd_target, "Target keep fraction")->excludes(dd_thr_opt);
  dd->add_option("--tol", dd_tol, "Threshold search tolerance");

  // clipscore
  auto* cs = app.add_subcommand("clipscore", "Match-score filtering");
  std::string cs_scores;
  std::optional<double> cs_threshold, cs_fraction;
  cs->add_option("--scores", cs_scores, "SCR1 file")->required();
  auto* cs_thr_opt = cs->add_option("--threshold", cs_threshold, "Keep score >= threshold");
  cs->add_option("--fraction", cs_fraction, "Keep the top fraction")->excludes(cs_thr_opt);

  // dbp
  auto* dbp = app.add_subcommand("dbp", "Density-based pruning");
  std::string dbp_input;
  DbpConfig dbp_cfg;
  std::optional<std::size_t> dbp_n;
  dbp->add_option("--input", dbp_input, "EMB1 file")->required();
  dbp->add_option("--k", dbp_cfg.k, "Clusters");
  dbp->add_option("--l", dbp_cfg.l, "Nearest centroids for d_inter");
  dbp->add_option("--tau", dbp_cfg.tau, "Softmax temperature");
  auto* dbp_n_opt = dbp->add_option("--n", dbp_n, "Target dataset size");
  dbp->add_option("--keep-fraction", dbp_cfg.keep_fraction, "Target size as a fraction")
      ->excludes(dbp_n_opt);
  dbp->add_option("--balance-ratio", dbp_cfg.balance_ratio, "Cluster balancing ratio");
  dbp->add_option("--iters", dbp_cfg.kmeans_iters, "k-means iterations");

  // qp
  auto* qp = app.add_subcommand("qp", "Solve an allocation problem file");
  std::string qp_problem, qp_out;
  double qp_beta = 0.0;
  qp->add_option("--problem", qp_problem, "Problem file ('-' for stdin)")->required();
  qp->add_option("--out", qp_out, "Output file (default stdout)");
  qp->add_option("--balance-ratio", qp_beta, "Lift lower bounds by this ratio");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Run dedup -> score -> DBP from --config");

  // bench
  auto* bench = app.add_subcommand("bench", "Time fit / assign / solve");
  std::vector<std::size_t> b_sizes{10000, 100000};
  std::vector<std::size_t> b_dims{128};
  std::vector<std::size_t> b_ks{500};
  std::size_t b_iters = 100;
  std::vector<std::size_t> b_qp_ks{1000, 10000};
  bench->add_option("--sizes", b_sizes)->delimiter(',');
  bench->add_option("--dims", b_dims)->delimiter(',');
  bench->add_option("--ks", b_ks)->delimiter(',');
  bench->add_option("--iters", b_iters);
  bench->add_option("--qp-ks", b_qp_ks)->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    const unsigned threads = g.workers();

    if (*gen) {
      if (gen_spreads.empty()) {
        for (std::size_t j = 0; j < gen_sizes.size(); ++j)
          gen_spreads.push_back(0.2 + 0.6 * double(j) / double(gen_sizes.size()));
      }
      const auto mix = gen_sphere_mixture(gen_dim, gen_sizes, gen_spreads, g.seed);
      ensure_dir(g.output);
      write_embeddings(g.out("embeddings.emb"), mix.embeddings);
      write_scores(g.out("scores.scr"), gen_scores(mix.embeddings.rows(), g.seed + 1));
      std::ofstream labels(g.out("labels.txt"));
      for (auto l : mix.labels) labels << l << '\n';
      std::cout << "gen: rows=" << mix.embeddings.rows() << " dim=" << gen_dim
                << " clusters=" << gen_sizes.size() << " -> " << g.output << '\n';
    } else if (*km) {
      const auto m = load_normalized(km_input, threads);
      const auto model = fit(m, FitOptions{km_k, km_iters, g.seed, threads});
      const auto a = assign(m, model, threads);
      ensure_dir(g.output);
      save_model(g.out("kmeans.kmc"), model);
      std::ofstream csv(g.out("assignments.csv"));
      csv << "id,cluster,sim_to_centroid\n";
      for (std::size_t i = 0; i < a.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", a.sim_to_centroid[i]);
        csv << i << ',' << a.nearest_cent[i] << ',' << buf << '\n';
      }
      std::cout << "kmeans: k=" << model.k << " iters_run=" << model.iters_run
                << " objective=" << model.objective << '\n';
    } else if (*dd) {
      DedupConfig cfg;
      cfg.k_dedup = dd_k;
      cfg.threshold = dd_threshold;
      cfg.target_keep_fraction = dd_target;
      cfg.validate();
      const auto m = load_normalized(dd_input, threads);
      const auto model = fit(m, FitOptions{cfg.k_dedup, dd_iters, g.seed, threads});
      const auto a = assign(m, model, threads);
      const double threshold =
          cfg.threshold ? *cfg.threshold
                        : find_threshold(m, model, a, *cfg.target_keep_fraction,
                                         dd_tol, threads)
                              .threshold;
      const auto mask = dedup_dataset(m, model, a, threshold, threads);
      if (mask.empty()) throw EmptySelectionError("dedup kept no examples");
      ensure_dir(g.output);
      write_mask(g.out("dedup.mask"), mask);
      std::cout << "dedup: keep_fraction="
                << double(mask.size()) / double(m.rows())
                << " threshold=" << threshold << " clusters=" << model.k << '\n';
    } else if (*cs) {
      ScoreFilterConfig cfg;
      if (cs_fraction) {
        cfg.mode = ScoreFilterConfig::Mode::kTopFraction;
        cfg.fraction = *cs_fraction;
      } else if (cs_threshold) {
        cfg.threshold = *cs_threshold;
      }
      const auto scores = load_scores(cs_scores);
      const auto res = apply_score_filter(scores, cfg);
      if (res.mask.empty()) throw EmptySelectionError("score filter kept no examples");
      ensure_dir(g.output);
      write_mask(g.out("score.mask"), res.mask);
      std::cout << "clipscore: kept=" << res.mask.size()
                << " cut_score=" << res.cut_score << '\n';
    } else if (*dbp) {
      dbp_cfg.seed = g.seed;
      dbp_cfg.target_size = dbp_n;
      dbp_cfg.validate();
      const auto m = load_normalized(dbp_input, threads);
      const auto r = run_dbp(m, dbp_cfg, dbp_cfg.resolve_target(m.rows()), threads);
      ensure_dir(g.output);
      write_mask(g.out("dbp.mask"), r.mask);
      StageReport rep{"dbp", m.rows(), r.mask.size(), 0.0, {}};
      rep.metrics.emplace_back("lambda", std::to_string(r.allocation.lambda));
      rep.metrics.emplace_back("cv_cluster_sizes_before", std::to_string(r.cv_before));
      rep.metrics.emplace_back("cv_cluster_sizes_after", std::to_string(r.cv_after));
      emit_report(g.output, {rep}, &r);
      std::cout << "dbp: kept=" << r.mask.size() << " of " << m.rows()
                << " cv_before=" << r.cv_before << " cv_after=" << r.cv_after
                << '\n';
    } else if (*qp) {
      AllocationProblem prob;
      if (qp_problem == "-") {
        prob = read_problem(std::cin);
      } else {
        std::ifstream in(qp_problem);
        if (!in) throw FormatError("cannot open problem " + qp_problem);
        prob = read_problem(in);
      }
      prob = with_balance_ratio(std::move(prob), qp_beta);
      const auto alloc = allocate(prob);
      if (qp_out.empty()) {
        write_allocation(std::cout, alloc);
      } else {
        std::ofstream out(qp_out);
        if (!out) throw std::runtime_error("cannot write " + qp_out);
        write_allocation(out, alloc);
      }
    } else if (*pl) {
      if (g.config.empty()) throw ConfigError("pipeline needs --config");
      auto cfg = PipelineConfig::from_file(g.config);
      if (seed_opt->count()) cfg.seed = g.seed;
      if (threads_opt->count()) cfg.threads = g.threads;
      if (det_opt->count()) cfg.deterministic = g.deterministic;
      if (out_opt->count()) cfg.output_dir = g.output;
      const auto res = run_pipeline(cfg);
      for (const auto& r : res.reports)
        std::cout << r.stage << ": " << r.input_size << " -> " << r.output_size
                  << '\n';
      std::cout << "final: " << res.final_mask.size() << '\n';
    } else if (*bench) {
      std::printf("%-8s %8s %6s %6s %12s %12s\n", "op", "rows", "dim", "k",
                  "seconds", "iters_run");
      for (auto n : b_sizes) {
        for (auto dim : b_dims) {
          for (auto k : b_ks) {
            if (k > n) continue;
            const std::vector<std::size_t> sizes(10, n / 10 + 1);
            const std::vector<double> spreads(10, 0.8);
            const auto m =
                gen_sphere_mixture(dim, sizes, spreads, g.seed).embeddings;
            KMeansModel model;
            const double t_fit = time_it([&] {
              model = fit(m, FitOptions{k, b_iters, g.seed, threads});
            });
            std::printf("%-8s %8zu %6zu %6zu %12.4f %12u\n", "fit", m.rows(), dim,
                        k, t_fit, model.iters_run);
            const double t_assign = time_it([&] { (void)assign(m, model, threads); });
            std::printf("%-8s %8zu %6zu %6zu %12.4f %12s\n", "assign", m.rows(),
                        dim, k, t_assign, "-");
          }
        }
      }
      for (auto k : b_qp_ks) {
        std::vector<double> probs(k);
        std::vector<std::size_t> counts(k);
        std::size_t total = 0;
        for (std::size_t j = 0; j < k; ++j) {
          probs[j] = double(j % 97 + 1);
          counts[j] = j % 50 + 1;
          total += counts[j];
        }
        double z = 0.0;
        for (double p : probs) z += p;
        const std::size_t n = total / 2;
        for (auto& p : probs) p = p / z * double(n);
        const auto prob = AllocationProblem::for_clusters(probs, counts, n);
        const double t = time_it([&] { (void)allocate(prob); });
        std::printf("%-8s %8s %6s %6zu %12.6f %12s\n", "solve", "-", "-", k, t, "-");
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
