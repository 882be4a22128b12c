#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "weaklabeler/corpus.hpp"

namespace weaklabeler {

enum class ProviderKind { file_backed, hashed };

/// Identifies one embedding source.
///
/// Provider tokens on the command line and in config files:
///   `hashed:SEED[:DIM]`  signed random projection of token counts (DIM
///                        defaults to 512); id becomes `hashed-SEED-DIM`
///   `file:NAME[:DIM]`    precomputed vectors `NAME.docs.{bin,json}` and
///                        `NAME.defs.{bin,json}` in the embeddings directory;
///                        DIM, when given, is checked against the sidecar
struct ProviderSpec {
  std::string provider_id;
  ProviderKind kind = ProviderKind::hashed;
  std::size_t dim = 0;  // 0 for file-backed providers means "from sidecar"
  std::uint64_t seed = 0;

  static ProviderSpec hashed(std::uint64_t seed, std::size_t dim = 512);
  static ProviderSpec parse(std::string_view token);
  std::string token() const;

  bool operator==(const ProviderSpec&) const = default;
};

inline constexpr std::size_t kDefaultHashedDim = 512;

/// Parses a comma-separated provider list; ids must be unique.
std::vector<ProviderSpec> parse_provider_list(std::string_view list);

struct EmbeddingVector {
  std::vector<float> values;

  std::size_t dim() const noexcept { return values.size(); }
  std::span<const float> view() const noexcept { return values; }
};

/// Row-major matrix of embeddings, one row per id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// `values.size()` must equal `ids.size() * dim`. Rows are stored as given;
  /// use `normalize_rows()` to put them on the unit sphere.
  EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> values, std::size_t dim,
                  ProviderSpec provider);

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const ProviderSpec& provider() const noexcept { return provider_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }
  std::span<const float> values() const noexcept { return values_; }
  EmbeddingVector vector(std::size_t i) const;

  /// Row index of `id`, or -1.
  std::ptrdiff_t index_of(std::string_view id) const;

  /// Rows for `ids` in the order given; throws MissingProvider if any is absent.
  EmbeddingMatrix select(std::span<const std::string> ids) const;

  /// Zero rows are left untouched (they stay invalid for similarity).
  void normalize_rows();

 private:
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::size_t dim_ = 0;
  ProviderSpec provider_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// x·y / (‖x‖‖y‖), accumulated in double and clamped to [-1, 1].
/// Throws DimensionMismatch, or ZeroNorm when either input is all zeros.
double cosine_similarity(std::span<const float> x, std::span<const float> y);
inline double cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y) {
  return cosine_similarity(x.view(), y.view());
}

/// Signed random projection of token counts, L2-normalized. An empty token
/// list yields the zero vector.
EmbeddingVector hash_embed(const TokenList& tokens, const ProviderSpec& spec);

/// Reads `count x dim` little-endian float32 values described by a JSON
/// sidecar {"dim", "count", "dtype": "f32le", "provider", "ids"}; rows are
/// normalized on load.
EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& binary_path,
                                      const std::filesystem::path& sidecar_path);

void save_embedding_matrix(const EmbeddingMatrix& matrix, const std::filesystem::path& binary_path,
                           const std::filesystem::path& sidecar_path);

/// Dense |rows| x |cols| similarity scores.
struct ScoreMatrix {
  std::vector<std::string> doc_ids;
  std::vector<std::string> cat_ids;
  std::vector<double> scores;

  std::size_t rows() const noexcept { return doc_ids.size(); }
  std::size_t cols() const noexcept { return cat_ids.size(); }
  double at(std::size_t i, std::size_t k) const { return scores[i * cols() + k]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(scores).subspan(i * cols(), cols());
  }
};

/// Cosine similarity of every document row against every definition row.
/// Throws ProviderMismatch when the two matrices come from different
/// providers or dimensions.
ScoreMatrix score_against_categories(const EmbeddingMatrix& docs, const EmbeddingMatrix& defs);

/// Produces document and definition embeddings for one provider: hashed
/// providers embed tokenized text on the fly, file-backed providers read
/// from `embeddings_dir`.
class Embedder {
 public:
  explicit Embedder(StopwordSet stopwords = default_stopwords(),
                    std::filesystem::path embeddings_dir = {});

  EmbeddingMatrix embed_documents(const ProviderSpec& provider,
                                  const DocumentCollection& docs) const;
  EmbeddingMatrix embed_categories(const ProviderSpec& provider,
                                   const std::vector<CategoryDefinition>& categories) const;

  const StopwordSet& stopwords() const noexcept { return stopwords_; }

 private:
  EmbeddingMatrix load_file_backed(const ProviderSpec& provider, std::string_view which,
                                   std::span<const std::string> ids) const;

  StopwordSet stopwords_;
  std::filesystem::path embeddings_dir_;
};

}  // namespace weaklabeler
