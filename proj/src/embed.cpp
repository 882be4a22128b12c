#include "weaklabeler/embed.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <set>

#include "json.hpp"
#include "jsonio.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/hashing.hpp"

namespace weaklabeler {

using nlohmann::json;

namespace {

template <typename T>
T parse_number(std::string_view text, std::string_view what) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidArgument, "bad " + std::string(what) + " '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    parts.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

}  // namespace

ProviderSpec ProviderSpec::hashed(std::uint64_t seed, std::size_t dim) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "hashed provider needs dim > 0");
  ProviderSpec p;
  p.kind = ProviderKind::hashed;
  p.seed = seed;
  p.dim = dim;
  p.provider_id = "hashed-" + std::to_string(seed) + "-" + std::to_string(dim);
  return p;
}

ProviderSpec ProviderSpec::parse(std::string_view token) {
  auto parts = split(token, ':');
  if (parts.size() >= 2 && parts.size() <= 3 && parts[0] == "hashed") {
    const auto seed = parse_number<std::uint64_t>(parts[1], "seed");
    const auto dim = parts.size() == 3 ? parse_number<std::size_t>(parts[2], "dim") : kDefaultHashedDim;
    return hashed(seed, dim);
  }
  if (parts.size() >= 2 && parts.size() <= 3 && parts[0] == "file" && !parts[1].empty()) {
    ProviderSpec p;
    p.kind = ProviderKind::file_backed;
    p.provider_id = std::string(parts[1]);
    if (parts.size() == 3) {
      p.dim = parse_number<std::size_t>(parts[2], "dim");
      if (p.dim == 0) throw Error(ErrorCode::InvalidArgument, "provider dim must be positive");
    }
    return p;
  }
  throw Error(ErrorCode::InvalidArgument,
              "provider '" + std::string(token) + "' is not hashed:SEED[:DIM] or file:NAME[:DIM]");
}

std::string ProviderSpec::token() const {
  if (kind == ProviderKind::hashed) return "hashed:" + std::to_string(seed) + ":" + std::to_string(dim);
  return "file:" + provider_id + (dim ? ":" + std::to_string(dim) : "");
}

std::vector<ProviderSpec> parse_provider_list(std::string_view list) {
  std::vector<ProviderSpec> out;
  std::set<std::string> seen;
  for (auto part : split(list, ',')) {
    if (part.empty()) continue;
    auto p = ProviderSpec::parse(part);
    if (!seen.insert(p.provider_id).second) {
      throw Error(ErrorCode::InvalidArgument, "provider '" + p.provider_id + "' listed twice");
    }
    out.push_back(std::move(p));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty provider list");
  return out;
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::vector<float> values,
                                 std::size_t dim, ProviderSpec provider)
    : ids_(std::move(ids)), values_(std::move(values)), dim_(dim), provider_(std::move(provider)) {
  if (dim_ == 0) throw Error(ErrorCode::InvalidArgument, "embedding dim must be positive");
  if (values_.size() != ids_.size() * dim_) {
    throw Error(ErrorCode::CountMismatch, "embedding matrix has " + std::to_string(values_.size()) +
                                              " values for " + std::to_string(ids_.size()) + " x " +
                                              std::to_string(dim_));
  }
  for (float v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite embedding value");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate embedding id '" + ids_[i] + "'");
    }
  }
}

EmbeddingVector EmbeddingMatrix::vector(std::size_t i) const {
  auto r = row(i);
  return EmbeddingVector{std::vector<float>(r.begin(), r.end())};
}

std::ptrdiff_t EmbeddingMatrix::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::string> ids) const {
  std::vector<float> values;
  values.reserve(ids.size() * dim_);
  for (const auto& id : ids) {
    auto idx = index_of(id);
    if (idx < 0) {
      throw Error(ErrorCode::MissingProvider,
                  "provider '" + provider_.provider_id + "' has no embedding for '" + id + "'");
    }
    auto r = row(static_cast<std::size_t>(idx));
    values.insert(values.end(), r.begin(), r.end());
  }
  return EmbeddingMatrix(std::vector<std::string>(ids.begin(), ids.end()), std::move(values), dim_,
                         provider_);
}

void EmbeddingMatrix::normalize_rows() {
  for (std::size_t i = 0; i < rows(); ++i) {
    double sq = 0.0;
    for (std::size_t d = 0; d < dim_; ++d) {
      const double v = values_[i * dim_ + d];
      sq += v * v;
    }
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t d = 0; d < dim_; ++d) {
      values_[i * dim_ + d] = static_cast<float>(values_[i * dim_ + d] * inv);
    }
  }
}

namespace {

double squared_norm(std::span<const float> x) {
  double sq = 0.0;
  for (float v : x) sq += static_cast<double>(v) * v;
  return sq;
}

double dot(std::span<const float> x, std::span<const float> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]) * y[i];
  return acc;
}

}  // namespace

double cosine_similarity(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "cosine of dims " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  const double nx = squared_norm(x);
  const double ny = squared_norm(y);
  if (nx == 0.0 || ny == 0.0) throw Error(ErrorCode::ZeroNorm, "cosine of a zero vector");
  const double cs = dot(x, y) / (std::sqrt(nx) * std::sqrt(ny));
  return std::clamp(cs, -1.0, 1.0);
}

EmbeddingVector hash_embed(const TokenList& tokens, const ProviderSpec& spec) {
  if (spec.kind != ProviderKind::hashed) {
    throw Error(ErrorCode::InvalidArgument, "hash_embed needs a hashed provider");
  }
  std::vector<double> acc(spec.dim, 0.0);
  for (const auto& token : tokens) {
    const std::uint64_t h = stable_hash(spec.seed, token);
    const std::size_t index = static_cast<std::size_t>((h & 0x7fffffffffffffffULL) % spec.dim);
    acc[index] += (h >> 63) ? -1.0 : 1.0;
  }
  double sq = 0.0;
  for (double v : acc) sq += v * v;
  EmbeddingVector out;
  out.values.resize(spec.dim, 0.0f);
  if (sq == 0.0) return out;
  const double inv = 1.0 / std::sqrt(sq);
  for (std::size_t d = 0; d < spec.dim; ++d) out.values[d] = static_cast<float>(acc[d] * inv);
  return out;
}

EmbeddingMatrix load_embedding_matrix(const std::filesystem::path& binary_path,
                                      const std::filesystem::path& sidecar_path) {
  const json meta = detail::read_json(sidecar_path);
  std::size_t dim = 0, count = 0;
  std::string dtype, provider_id;
  std::vector<std::string> ids;
  try {
    dim = meta.at("dim").get<std::size_t>();
    count = meta.at("count").get<std::size_t>();
    dtype = meta.at("dtype").get<std::string>();
    provider_id = meta.value("provider", binary_path.stem().string());
    ids = meta.at("ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, sidecar_path.string() + ": " + e.what());
  }
  if (dtype != "f32le") throw Error(ErrorCode::Parse, "unsupported dtype '" + dtype + "'");
  if (dim == 0) throw Error(ErrorCode::Parse, sidecar_path.string() + ": dim must be positive");
  if (ids.size() != count) {
    throw Error(ErrorCode::CountMismatch, sidecar_path.string() + ": " + std::to_string(ids.size()) +
                                              " ids for count " + std::to_string(count));
  }

  const std::string bytes = detail::read_file(binary_path);
  const std::size_t expected = count * dim * 4;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::LengthMismatch, binary_path.string() + ": " + std::to_string(bytes.size()) +
                                               " bytes, expected " + std::to_string(expected));
  }
  std::vector<float> values(count * dim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 4 + b]);
    values[i] = std::bit_cast<float>(bits);
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::NonFinite, binary_path.string() + ": non-finite value at row " +
                                            std::to_string(i / dim));
    }
  }

  ProviderSpec provider;
  provider.kind = ProviderKind::file_backed;
  provider.provider_id = provider_id;
  provider.dim = dim;
  EmbeddingMatrix m(std::move(ids), std::move(values), dim, std::move(provider));
  m.normalize_rows();
  return m;
}

void save_embedding_matrix(const EmbeddingMatrix& matrix, const std::filesystem::path& binary_path,
                           const std::filesystem::path& sidecar_path) {
  std::string bytes;
  bytes.reserve(matrix.values().size() * 4);
  for (float v : matrix.values()) {
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) bytes += static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  detail::write_file(binary_path, bytes);
  json meta = {{"dim", matrix.dim()},
               {"count", matrix.rows()},
               {"dtype", "f32le"},
               {"provider", matrix.provider().provider_id},
               {"ids", matrix.ids()}};
  detail::write_json(sidecar_path, meta);
}

constexpr double kUnitNormTolerance = 1e-6;

ScoreMatrix score_against_categories(const EmbeddingMatrix& docs, const EmbeddingMatrix& defs) {
  if (docs.provider().provider_id != defs.provider().provider_id || docs.dim() != defs.dim()) {
    throw Error(ErrorCode::ProviderMismatch,
                "documents from '" + docs.provider().provider_id + "' (dim " + std::to_string(docs.dim()) +
                    ") vs definitions from '" + defs.provider().provider_id + "' (dim " +
                    std::to_string(defs.dim()) + ")");
  }
  auto norms = [](const EmbeddingMatrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      out[i] = std::sqrt(squared_norm(m.row(i)));
      if (out[i] == 0.0) throw Error(ErrorCode::ZeroNorm, "zero embedding for '" + m.ids()[i] + "'");
      // Normalized rows count as unit; float32 storage cannot do better.
      if (std::abs(out[i] - 1.0) <= kUnitNormTolerance) out[i] = 1.0;
    }
    return out;
  };
  const auto doc_norms = norms(docs);
  const auto def_norms = norms(defs);

  ScoreMatrix out;
  out.doc_ids = docs.ids();
  out.cat_ids = defs.ids();
  out.scores.resize(docs.rows() * defs.rows());
  for (std::size_t i = 0; i < docs.rows(); ++i) {
    for (std::size_t k = 0; k < defs.rows(); ++k) {
      const double cs = dot(docs.row(i), defs.row(k)) / (doc_norms[i] * def_norms[k]);
      out.scores[i * defs.rows() + k] = std::clamp(cs, -1.0, 1.0);
    }
  }
  return out;
}

Embedder::Embedder(StopwordSet stopwords, std::filesystem::path embeddings_dir)
    : stopwords_(std::move(stopwords)), embeddings_dir_(std::move(embeddings_dir)) {}

EmbeddingMatrix Embedder::embed_documents(const ProviderSpec& provider,
                                          const DocumentCollection& docs) const {
  auto ids = docs.ids();
  if (provider.kind == ProviderKind::file_backed) return load_file_backed(provider, "docs", ids);
  std::vector<float> values;
  values.reserve(docs.size() * provider.dim);
  for (const auto& d : docs) {
    auto v = hash_embed(tokenize(d.abstract, stopwords_), provider);
    values.insert(values.end(), v.values.begin(), v.values.end());
  }
  return EmbeddingMatrix(std::move(ids), std::move(values), provider.dim, provider);
}

EmbeddingMatrix Embedder::embed_categories(const ProviderSpec& provider,
                                           const std::vector<CategoryDefinition>& categories) const {
  std::vector<std::string> ids;
  for (const auto& c : categories) ids.push_back(c.cat_id);
  if (provider.kind == ProviderKind::file_backed) return load_file_backed(provider, "defs", ids);
  std::vector<float> values;
  values.reserve(categories.size() * provider.dim);
  for (const auto& c : categories) {
    auto v = hash_embed(tokenize(c.definition, stopwords_), provider);
    values.insert(values.end(), v.values.begin(), v.values.end());
  }
  return EmbeddingMatrix(std::move(ids), std::move(values), provider.dim, provider);
}

EmbeddingMatrix Embedder::load_file_backed(const ProviderSpec& provider, std::string_view which,
                                           std::span<const std::string> ids) const {
  const auto stem = provider.provider_id + "." + std::string(which);
  auto m = load_embedding_matrix(embeddings_dir_ / (stem + ".bin"), embeddings_dir_ / (stem + ".json"));
  if (provider.dim != 0 && m.dim() != provider.dim) {
    throw Error(ErrorCode::DimensionMismatch, "provider '" + provider.provider_id + "' declares dim " +
                                                  std::to_string(provider.dim) + " but " + stem +
                                                  " has dim " + std::to_string(m.dim()));
  }
  auto selected = m.select(ids);
  // Carry the caller's spec so both sides of a comparison share one identity.
  ProviderSpec spec = provider;
  spec.dim = m.dim();
  std::vector<float> values(selected.values().begin(), selected.values().end());
  return EmbeddingMatrix(selected.ids(), std::move(values), m.dim(), spec);
}

}  // namespace weaklabeler
