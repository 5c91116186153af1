#include "dbprune/embed_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "dbprune/errors.hpp"
#include "dbprune/parallel.hpp"
#include "byte_io.hpp"

namespace dbprune {
namespace {

using namespace detail;

static_assert(sizeof(float) == 4);

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kScoreMagic[4] = {'S', 'C', 'R', '1'};
constexpr std::uint8_t kDtypeF32 = 0x01;

// Decodes `count` floats starting at `offset`; rejects non-finite values.
std::vector<float> decode_payload(const std::vector<unsigned char>& bytes,
                                  std::size_t offset, std::size_t count,
                                  const std::string& what) {
  const std::size_t need = count * 4;
  if (bytes.size() - offset < need) {
    throw FormatError(what + ": truncated payload, expected " +
                          std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() - offset),
                      bytes.size());
  }
  if (bytes.size() - offset > need) {
    throw FormatError(what + ": trailing bytes after payload", offset + need);
  }
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float v = read_f32(bytes.data() + offset + 4 * i);
    if (!std::isfinite(v)) {
      throw FormatError(what + ": non-finite value", offset + 4 * i);
    }
    out[i] = v;
  }
  return out;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim,
                                 std::vector<float> data, bool normalized)
    : rows_(rows), dim_(dim), data_(std::move(data)), normalized_(normalized) {
  if (rows_ == 0 || dim_ == 0)
    throw std::invalid_argument("embedding matrix needs rows >= 1, dim >= 1");
  if (data_.size() != rows_ * dim_)
    throw std::invalid_argument("embedding data size does not match shape");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw std::invalid_argument("non-finite embedding value in row " +
                                  std::to_string(i / dim_));
  }
}

SelectionMask SelectionMask::all(std::size_t rows) {
  SelectionMask m;
  m.ids.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) m.ids[i] = i;
  return m;
}

void SelectionMask::validate(std::size_t original_rows) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= original_rows)
      throw std::invalid_argument("mask id " + std::to_string(ids[i]) +
                                  " out of range for " +
                                  std::to_string(original_rows) + " rows");
    if (i > 0 && ids[i] <= ids[i - 1])
      throw std::invalid_argument("mask ids not strictly increasing at position " +
                                  std::to_string(i));
  }
}

SelectionMask compose(const SelectionMask& outer, const SelectionMask& local) {
  local.validate(outer.size());
  SelectionMask out;
  out.ids.reserve(local.size());
  for (auto i : local.ids) out.ids.push_back(outer.ids[i]);
  return out;
}

bool is_subset(const SelectionMask& inner, const SelectionMask& outer) {
  return std::includes(outer.ids.begin(), outer.ids.end(), inner.ids.begin(),
                       inner.ids.end());
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string what = "EMB1 " + path.string();
  if (bytes.size() < kEmbHeaderSize)
    throw FormatError(what + ": truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kEmbMagic, 4) != 0)
    throw FormatError(what + ": bad magic", 0);
  const auto rows = read_le<std::uint64_t>(bytes.data() + 4);
  const auto dim = read_le<std::uint32_t>(bytes.data() + 12);
  const auto dtype = bytes[16];
  if (rows == 0) throw FormatError(what + ": row count is 0", 4);
  if (dim == 0) throw FormatError(what + ": dim is 0", 12);
  if (dtype != kDtypeF32)
    throw FormatError(what + ": unsupported dtype code " + std::to_string(dtype),
                      16);
  if (rows > (bytes.size() - kEmbHeaderSize) / 4 / dim) {
    throw FormatError(what + ": truncated payload for " + std::to_string(rows) +
                          " rows",
                      bytes.size());
  }
  auto payload = decode_payload(bytes, kEmbHeaderSize, rows * dim, what);
  return EmbeddingMatrix(rows, dim, std::move(payload), false);
}

void write_embeddings(const std::filesystem::path& path,
                      const EmbeddingMatrix& m) {
  std::string out;
  out.reserve(kEmbHeaderSize + m.data().size() * 4);
  out.append(kEmbMagic, 4);
  put_le<std::uint64_t>(out, m.rows());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  out.push_back(static_cast<char>(kDtypeF32));
  for (float v : m.data()) put_f32(out, v);
  spill(path, out);
}

ScoreArray load_scores(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string what = "SCR1 " + path.string();
  if (bytes.size() < kScoreHeaderSize)
    throw FormatError(what + ": truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kScoreMagic, 4) != 0)
    throw FormatError(what + ": bad magic", 0);
  const auto rows = read_le<std::uint64_t>(bytes.data() + 4);
  if (rows > (bytes.size() - kScoreHeaderSize) / 4)
    throw FormatError(what + ": truncated payload", bytes.size());
  return ScoreArray{decode_payload(bytes, kScoreHeaderSize, rows, what)};
}

void write_scores(const std::filesystem::path& path, const ScoreArray& s) {
  std::string out;
  out.append(kScoreMagic, 4);
  put_le<std::uint64_t>(out, s.rows());
  for (float v : s.scores) put_f32(out, v);
  spill(path, out);
}

SelectionMask load_mask(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open mask " + path.string());
  SelectionMask mask;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() ||
        line.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("mask " + path.string() + ": bad line " +
                        std::to_string(lineno));
    }
    const auto id = std::stoull(line);
    if (!mask.ids.empty() && id <= mask.ids.back())
      throw FormatError("mask " + path.string() + ": ids not ascending at line " +
                        std::to_string(lineno));
    mask.ids.push_back(id);
  }
  return mask;
}

void write_mask(const std::filesystem::path& path, const SelectionMask& mask) {
  std::string out;
  for (auto id : mask.ids) {
    out += std::to_string(id);
    out.push_back('\n');
  }
  spill(path, out);
}

EmbeddingMatrix normalize_rows(EmbeddingMatrix m, unsigned threads) {
  const std::size_t dim = m.dim();
  std::vector<std::size_t> zero_rows;
  // First pass finds zero rows so the error always names the lowest index.
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    if (std::all_of(r.begin(), r.end(), [](float v) { return v == 0.0f; }))
      throw std::invalid_argument("zero-norm embedding row " +
                                  std::to_string(i));
  }
  parallel_for(m.rows(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      float* r = m.data_.data() + i * dim;
      double ss = 0.0;
      for (std::size_t d = 0; d < dim; ++d) ss += double(r[d]) * double(r[d]);
      const double norm = std::sqrt(ss);
      for (std::size_t d = 0; d < dim; ++d)
        r[d] = static_cast<float>(double(r[d]) / norm);
    }
  });
  m.normalized_ = true;
  return m;
}

EmbeddingMatrix subset(const EmbeddingMatrix& m, const SelectionMask& mask) {
  if (mask.empty()) throw std::invalid_argument("subset: empty mask");
  mask.validate(m.rows());
  std::vector<float> data;
  data.reserve(mask.size() * m.dim());
  for (auto id : mask.ids) {
    const auto r = m.row(id);
    data.insert(data.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(mask.size(), m.dim(), std::move(data), m.normalized());
}

ScoreArray subset(const ScoreArray& s, const SelectionMask& mask) {
  mask.validate(s.rows());
  ScoreArray out;
  out.scores.reserve(mask.size());
  for (auto id : mask.ids) out.scores.push_back(s.scores[id]);
  return out;
}

SphereMixture gen_sphere_mixture(std::size_t dim,
                                 std::span<const std::size_t> sizes,
                                 std::span<const double> spreads,
                                 std::uint64_t seed) {
  if (sizes.empty() || dim == 0)
    throw std::invalid_argument("gen_sphere_mixture: need k >= 1 and dim >= 1");
  if (sizes.size() != spreads.size())
    throw std::invalid_argument("gen_sphere_mixture: sizes/spreads length mismatch");
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    if (sizes[j] == 0)
      throw std::invalid_argument("gen_sphere_mixture: cluster size must be >= 1");
    if (!(spreads[j] >= 0.0 && spreads[j] <= 1.0))
      throw std::invalid_argument("gen_sphere_mixture: spread outside [0, 1]");
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto unit = [](std::vector<double>& v) {
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double n = std::sqrt(ss);
    for (double& x : v) x /= n;
  };

  SphereMixture out;
  std::vector<std::vector<double>> dirs(sizes.size(), std::vector<double>(dim));
  for (auto& d : dirs) {
    do {
      for (double& x : d) x = gauss(rng);
    } while (std::all_of(d.begin(), d.end(), [](double x) { return x == 0.0; }));
    unit(d);
  }

  std::size_t total = 0;
  for (auto s : sizes) total += s;
  std::vector<float> data;
  data.reserve(total * dim);
  out.labels.reserve(total);
  const double noise_scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> p(dim);
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    for (std::size_t i = 0; i < sizes[j]; ++i) {
      double ss = 0.0;
      do {
        ss = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          p[d] = dirs[j][d] + spreads[j] * noise_scale * gauss(rng);
          ss += p[d] * p[d];
        }
      } while (ss == 0.0);
      const double n = std::sqrt(ss);
      for (std::size_t d = 0; d < dim; ++d)
        data.push_back(static_cast<float>(p[d] / n));
      out.labels.push_back(static_cast<std::uint32_t>(j));
    }
  }
  for (const auto& d : dirs) out.directions.emplace_back(d.begin(), d.end());
  out.embeddings = EmbeddingMatrix(total, dim, std::move(data), true);
  return out;
}

ScoreArray gen_scores(std::size_t rows, std::uint64_t seed, float lo,
                      float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  ScoreArray s;
  s.scores.resize(rows);
  for (auto& v : s.scores) v = u(rng);
  return s;
}

}  // namespace dbprune
