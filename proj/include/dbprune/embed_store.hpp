#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace dbprune {

/// Dense row-major matrix of 32-bit embeddings, one row per example.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  /// Takes ownership of `data` (rows * dim values). Throws
  /// std::invalid_argument on shape mismatch, empty shape or non-finite
  /// entries.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data,
                  bool normalized = false);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  bool normalized() const noexcept { return normalized_; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * dim_, dim_};
  }
  std::span<const float> data() const noexcept { return data_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) =
      default;

 private:
  friend EmbeddingMatrix normalize_rows(EmbeddingMatrix m, unsigned threads);

  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
};

/// Per-example match score (cosine similarity units).
struct ScoreArray {
  std::vector<float> scores;

  std::size_t rows() const noexcept { return scores.size(); }
};

/// Strictly increasing example ids into the original dataset.
struct SelectionMask {
  std::vector<std::uint64_t> ids;

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }

  static SelectionMask all(std::size_t rows);

  /// Throws std::invalid_argument unless ids are strictly increasing and
  /// below `original_rows`.
  void validate(std::size_t original_rows) const;

  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;
};

/// Maps `local` (indices into the rows selected by `outer`) back to ids of
/// the dataset `outer` indexes.
SelectionMask compose(const SelectionMask& outer, const SelectionMask& local);

/// True iff every id of `inner` also appears in `outer`.
bool is_subset(const SelectionMask& inner, const SelectionMask& outer);

// EMB1: "EMB1" | u64 rows | u32 dim | u8 dtype (0x01 = f32) | f32 payload.
inline constexpr std::size_t kEmbHeaderSize = 17;
// SCR1: "SCR1" | u64 rows | f32 payload.
inline constexpr std::size_t kScoreHeaderSize = 12;

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path,
                      const EmbeddingMatrix& m);

ScoreArray load_scores(const std::filesystem::path& path);
void write_scores(const std::filesystem::path& path, const ScoreArray& s);

SelectionMask load_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const SelectionMask& mask);

/// Scales every row to unit Euclidean norm (64-bit accumulation). Throws
/// std::invalid_argument naming the first zero-norm row.
EmbeddingMatrix normalize_rows(EmbeddingMatrix m, unsigned threads = 1);

/// Rows of `m` at `mask.ids`, in mask order. The result keeps m's
/// normalized flag.
EmbeddingMatrix subset(const EmbeddingMatrix& m, const SelectionMask& mask);

ScoreArray subset(const ScoreArray& s, const SelectionMask& mask);

struct SphereMixture {
  EmbeddingMatrix embeddings;
  std::vector<std::uint32_t> labels;
  std::vector<std::vector<float>> directions;
};

/// Synthetic population: k random unit directions; cluster j contributes
/// sizes[j] points direction + spreads[j] * g / sqrt(dim), g ~ N(0, I),
/// renormalized. Rows are emitted cluster by cluster. Deterministic in all
/// arguments.
SphereMixture gen_sphere_mixture(std::size_t dim,
                                 std::span<const std::size_t> sizes,
                                 std::span<const double> spreads,
                                 std::uint64_t seed);

/// Synthetic match scores, uniform in [lo, hi).
ScoreArray gen_scores(std::size_t rows, std::uint64_t seed, float lo = 0.0f,
                      float hi = 0.5f);

}  // namespace dbprune
