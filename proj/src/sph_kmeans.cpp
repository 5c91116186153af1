#include "dbprune/sph_kmeans.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "byte_io.hpp"
#include "dbprune/errors.hpp"
#include "dbprune/parallel.hpp"

namespace dbprune {
namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kModelMagic[4] = {'K', 'M', 'C', '1'};
constexpr std::size_t kModelHeaderSize = 4 + 8 + 4 + 8 + 4 + 8;

// Rows converted to double per GEMM block.
constexpr std::size_t kAssignBlock = 1024;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void require_normalized(const EmbeddingMatrix& m, const char* who) {
  if (!m.normalized())
    throw std::invalid_argument(std::string(who) +
                                ": embeddings must be unit-normalized");
}

// Moves the worst-fit point of a multi-member cluster into every empty
// cluster. Returns true if anything moved.
bool repair_empty_clusters(Assignment& a, std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (auto c : a.nearest_cent) ++counts[c];
  bool moved = false;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] != 0) continue;
    std::size_t worst = a.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (counts[a.nearest_cent[i]] < 2) continue;
      if (worst == a.size() || a.sim_to_centroid[i] < a.sim_to_centroid[worst])
        worst = i;
    }
    if (worst == a.size())
      throw std::logic_error("k-means repair: no donor cluster available");
    --counts[a.nearest_cent[worst]];
    a.nearest_cent[worst] = static_cast<std::uint32_t>(j);
    a.sim_to_centroid[worst] = 1.0;
    counts[j] = 1;
    moved = true;
  }
  return moved;
}

// Normalized member mean per cluster. Each cluster sums its members in
// ascending id order, so the result does not depend on the thread count.
void update_centroids(const EmbeddingMatrix& m, const Assignment& a,
                      KMeansModel& model, unsigned threads) {
  const auto members = cluster_members(a, model.k);
  const std::size_t dim = model.dim;
  parallel_for(model.k, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> sum(dim);
    for (std::size_t j = begin; j < end; ++j) {
      if (members[j].empty()) continue;
      std::fill(sum.begin(), sum.end(), 0.0);
      for (auto i : members[j]) {
        const auto r = m.row(i);
        for (std::size_t d = 0; d < dim; ++d) sum[d] += r[d];
      }
      double ss = 0.0;
      for (double v : sum) ss += v * v;
      // Members that cancel out leave the previous centroid in place.
      if (ss == 0.0) continue;
      const double norm = std::sqrt(ss);
      double* c = model.centroids.data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) c[d] = sum[d] / norm;
    }
  });
}

}  // namespace

Assignment assign(const EmbeddingMatrix& m, const KMeansModel& model,
                  unsigned threads) {
  if (m.dim() != model.dim)
    throw std::invalid_argument("assign: embedding dim " +
                                std::to_string(m.dim()) + " != model dim " +
                                std::to_string(model.dim));
  if (model.k == 0) throw std::invalid_argument("assign: empty model");

  const std::size_t n = m.rows();
  const std::size_t dim = m.dim();
  const std::size_t k = model.k;
  Assignment out;
  out.nearest_cent.resize(n);
  out.sim_to_centroid.resize(n);

  const Eigen::Map<const RowMatrix> cents(model.centroids.data(), k, dim);
  const std::size_t blocks = (n + kAssignBlock - 1) / kAssignBlock;
  parallel_for(blocks, threads, [&](std::size_t b0, std::size_t b1) {
    RowMatrix x;
    RowMatrix sims;
    for (std::size_t b = b0; b < b1; ++b) {
      const std::size_t r0 = b * kAssignBlock;
      const std::size_t rn = std::min(kAssignBlock, n - r0);
      const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic,
                                           Eigen::Dynamic, Eigen::RowMajor>>
          xf(m.data().data() + r0 * dim, rn, dim);
      x = xf.cast<double>();
      sims.noalias() = x * cents.transpose();
      for (std::size_t r = 0; r < rn; ++r) {
        std::size_t best = 0;
        double best_sim = sims(r, 0);
        for (std::size_t j = 1; j < k; ++j) {
          if (sims(r, j) > best_sim) {
            best_sim = sims(r, j);
            best = j;
          }
        }
        out.nearest_cent[r0 + r] = static_cast<std::uint32_t>(best);
        out.sim_to_centroid[r0 + r] = best_sim;
      }
    }
  });
  return out;
}

KMeansModel fit(const EmbeddingMatrix& m, const FitOptions& opts) {
  require_normalized(m, "fit");
  if (opts.k == 0 || opts.k > m.rows())
    throw std::invalid_argument("fit: k = " + std::to_string(opts.k) +
                                " must be in [1, " + std::to_string(m.rows()) +
                                "]");
  if (opts.iters == 0) throw std::invalid_argument("fit: iters must be >= 1");

  KMeansModel model;
  model.k = opts.k;
  model.dim = m.dim();
  model.seed = opts.seed;
  model.centroids.resize(model.k * model.dim);

  // Partial Fisher-Yates: first k slots become k distinct seed rows.
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(m.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t j = 0; j < model.k; ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, m.rows() - 1);
    std::swap(order[j], order[pick(rng)]);
    const auto r = m.row(order[j]);
    double ss = 0.0;
    for (float v : r) ss += double(v) * double(v);
    const double norm = std::sqrt(ss);
    for (std::size_t d = 0; d < model.dim; ++d)
      model.centroids[j * model.dim + d] = double(r[d]) / norm;
  }

  Assignment current = assign(m, model, opts.threads);
  model.objective_trace.push_back(mean_of(current.sim_to_centroid));
  for (std::size_t it = 1; it <= opts.iters; ++it) {
    repair_empty_clusters(current, model.k);
    update_centroids(m, current, model, opts.threads);
    Assignment next = assign(m, model, opts.threads);
    model.objective_trace.push_back(mean_of(next.sim_to_centroid));
    model.iters_run = static_cast<std::uint32_t>(it);
    const bool changed = next.nearest_cent != current.nearest_cent;
    current = std::move(next);
    if (!changed) break;
  }
  model.objective = model.objective_trace.back();
  return model;
}

std::vector<std::vector<std::size_t>> cluster_members(const Assignment& a,
                                                      std::size_t k) {
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto c = a.nearest_cent[i];
    if (c >= k)
      throw std::invalid_argument("cluster id " + std::to_string(c) +
                                  " out of range for k = " + std::to_string(k));
    members[c].push_back(i);
  }
  return members;
}

std::vector<std::vector<double>> centroid_neighbors(const KMeansModel& model,
                                                    std::size_t l) {
  if (l == 0 || l >= model.k)
    throw std::invalid_argument("centroid_neighbors: l = " + std::to_string(l) +
                                " must be in [1, k - 1] with k = " +
                                std::to_string(model.k));
  std::vector<std::vector<double>> out(model.k);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t j = 0; j < model.k; ++j) {
    sims.clear();
    const auto cj = model.centroid(j);
    for (std::size_t i = 0; i < model.k; ++i) {
      if (i == j) continue;
      const auto ci = model.centroid(i);
      double s = 0.0;
      for (std::size_t d = 0; d < model.dim; ++d) s += cj[d] * ci[d];
      sims.emplace_back(s, i);
    }
    std::partial_sort(sims.begin(), sims.begin() + l, sims.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first
                                                  : a.second < b.second;
                      });
    out[j].reserve(l);
    for (std::size_t t = 0; t < l; ++t) out[j].push_back(sims[t].first);
  }
  return out;
}

void save_model(const std::filesystem::path& path, const KMeansModel& model) {
  using namespace detail;
  std::string out;
  out.reserve(kModelHeaderSize + model.centroids.size() * 4);
  out.append(kModelMagic, 4);
  put_le<std::uint64_t>(out, model.k);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim));
  put_le<std::uint64_t>(out, model.seed);
  put_le<std::uint32_t>(out, model.iters_run);
  put_f64(out, model.objective);
  for (double c : model.centroids) put_f32(out, static_cast<float>(c));
  spill(path, out);
}

KMeansModel load_model(const std::filesystem::path& path) {
  using namespace detail;
  const auto bytes = slurp(path);
  const std::string what = "KMC1 " + path.string();
  if (bytes.size() < kModelHeaderSize)
    throw FormatError(what + ": truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw FormatError(what + ": bad magic", 0);
  KMeansModel model;
  model.k = read_le<std::uint64_t>(bytes.data() + 4);
  model.dim = read_le<std::uint32_t>(bytes.data() + 12);
  model.seed = read_le<std::uint64_t>(bytes.data() + 16);
  model.iters_run = read_le<std::uint32_t>(bytes.data() + 24);
  model.objective = read_f64(bytes.data() + 28);
  if (model.k == 0) throw FormatError(what + ": k is 0", 4);
  if (model.dim == 0) throw FormatError(what + ": dim is 0", 12);
  const std::size_t avail = (bytes.size() - kModelHeaderSize) / 4;
  if (model.k > avail / model.dim || avail != model.k * model.dim ||
      (bytes.size() - kModelHeaderSize) % 4 != 0)
    throw FormatError(what + ": payload size does not match k * dim",
                      bytes.size());
  model.centroids.resize(model.k * model.dim);
  for (std::size_t i = 0; i < model.centroids.size(); ++i) {
    const float v = read_f32(bytes.data() + kModelHeaderSize + 4 * i);
    if (!std::isfinite(v))
      throw FormatError(what + ": non-finite centroid value",
                        kModelHeaderSize + 4 * i);
    model.centroids[i] = v;
  }
  return model;
}

}  // namespace dbprune
