#include <cstring>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "weaklabeler/error.hpp"

using namespace weaklabeler;
using testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

EmbeddingVector vec(std::initializer_list<float> v) { return {std::vector<float>(v)}; }

void write_raw(const std::filesystem::path& bin, const std::filesystem::path& json_path, const std::vector<float>& values,
               std::size_t bytes, std::size_t count, std::size_t dim, std::vector<std::string> ids) {
  std::ofstream out(bin, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(bytes));
  out.close();
  nlohmann::json side = {{"dim", dim}, {"count", count}, {"dtype", "f32le"}, {"provider", "test"}, {"ids", ids}};
  std::ofstream(json_path) << side.dump();
}

EmbeddingMatrix random_matrix(std::size_t rows, std::size_t dim, Rng& rng, const std::string& prefix,
                              const ProviderSpec& spec) {
  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t i = 0; i < rows; ++i) {
    ids.push_back(prefix + std::to_string(i));
    for (std::size_t j = 0; j < dim; ++j) values.push_back(static_cast<float>(rng.normal()));
  }
  return EmbeddingMatrix(ids, values, dim, spec);
}

}  // namespace

TEST_CASE("cosine similarity examples") {
  CHECK(cosine_similarity(vec({1, 0, 0}), vec({1, 0, 0})) == 1.0);
  CHECK(cosine_similarity(vec({1, 0}), vec({0, 1})) == 0.0);
  CHECK(cosine_similarity(vec({1, 1}), vec({1, 0})) == doctest::Approx(0.70710678).epsilon(1e-9));
  CHECK(std::abs(cosine_similarity(vec({1, 1}), vec({1, 0})) - 1 / std::sqrt(2.0)) < 1e-9);
}

TEST_CASE("cosine similarity errors") {
  CHECK(code_of([] { cosine_similarity(vec({1, 0}), vec({1, 0, 0})); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([] { cosine_similarity(vec({0, 0}), vec({1, 0})); }) == ErrorCode::ZeroNorm);
  CHECK(code_of([] { cosine_similarity(vec({1, 0}), vec({0, 0})); }) == ErrorCode::ZeroNorm);
}

TEST_CASE("cosine similarity is symmetric, scale invariant and bounded") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    EmbeddingVector x, y;
    const auto dim = 1 + rng.below(16);
    for (std::size_t i = 0; i < dim; ++i) {
      x.values.push_back(static_cast<float>(rng.normal()));
      y.values.push_back(static_cast<float>(rng.normal()));
    }
    const double c = cosine_similarity(x, y);
    CHECK(c == cosine_similarity(y, x));
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(c - testing::cosine_oracle(testing::to_double(x.view()), testing::to_double(y.view()))) < 1e-9);
    const float alpha = static_cast<float>(std::pow(2.0, static_cast<double>(rng.below(20)) - 10.0));
    EmbeddingVector ax = x;
    for (auto& v : ax.values) v *= alpha;
    CHECK(std::abs(cosine_similarity(ax, y) - c) < 1e-9);
  }
}

TEST_CASE("hash_embed determinism and normalization") {
  const auto spec = ProviderSpec::hashed(42, 64);
  const TokenList tokens = {"flood", "risk", "dams", "flood"};
  const auto a = hash_embed(tokens, spec);
  const auto b = hash_embed(tokens, spec);
  REQUIRE(a.dim() == 64);
  CHECK(std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0);
  double norm = 0;
  for (float v : a.values) norm += static_cast<double>(v) * v;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);

  CHECK(hash_embed({"a"}, spec).values == hash_embed({"a", "a"}, spec).values);

  const auto empty = hash_embed({}, spec);
  CHECK(empty.dim() == 64);
  CHECK(std::all_of(empty.values.begin(), empty.values.end(), [](float v) { return v == 0.0f; }));
  CHECK(code_of([&] { cosine_similarity(empty, a); }) == ErrorCode::ZeroNorm);
}

TEST_CASE("hash_embed matches an independent bucket computation") {
  const auto spec = ProviderSpec::hashed(9, 32);
  const TokenList tokens = {"alpha", "beta", "alpha", "gamma"};
  std::vector<double> expected(32, 0.0);
  for (const auto& t : tokens) {
    const auto h = stable_hash(9, t);
    const auto index = (h & 0x7fffffffffffffffULL) % 32;
    expected[index] += (h >> 63) ? -1.0 : 1.0;
  }
  double norm = 0;
  for (double v : expected) norm += v * v;
  const auto got = hash_embed(tokens, spec);
  for (std::size_t i = 0; i < 32; ++i) CHECK(got.values[i] == doctest::Approx(expected[i] / std::sqrt(norm)));
}

TEST_CASE("hashed disjoint token sets are nearly orthogonal over 1000 seeds") {
  const TokenList x = {"drought", "reservoir", "aquifer", "streamflow", "irrigation"};
  const TokenList y = {"hospital", "patients", "clinicians", "admissions", "ambulance"};
  int small = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto spec = ProviderSpec::hashed(seed, 1u << 16);
    if (std::abs(cosine_similarity(hash_embed(x, spec), hash_embed(y, spec))) < 0.1) ++small;
  }
  CHECK(small >= 990);
}

TEST_CASE("provider specs") {
  const auto h = ProviderSpec::parse("hashed:7");
  CHECK(h.kind == ProviderKind::hashed);
  CHECK(h.seed == 7);
  CHECK(h.dim == kDefaultHashedDim);
  CHECK(h.provider_id == "hashed-7-512");
  CHECK(ProviderSpec::parse(h.token()) == h);
  CHECK(ProviderSpec::parse("hashed:7:64").dim == 64);

  const auto f = ProviderSpec::parse("file:multi-qa-mpnet-base-cos-v1:768");
  CHECK(f.kind == ProviderKind::file_backed);
  CHECK(f.provider_id == "multi-qa-mpnet-base-cos-v1");
  CHECK(f.dim == 768);

  CHECK(parse_provider_list("hashed:1,hashed:2").size() == 2);
  CHECK_THROWS_AS(parse_provider_list("hashed:1,hashed:1"), Error);
  CHECK_THROWS_AS(ProviderSpec::parse("hashed:x"), Error);
  CHECK_THROWS_AS(ProviderSpec::parse("hashed:1:0"), Error);
  CHECK_THROWS_AS(ProviderSpec::parse("bert"), Error);
}

TEST_CASE("load_embedding_matrix sizes and normalization") {
  TempDir dir("embed");
  const std::vector<float> values = {3, 4, 0, 1, 0, 0};
  write_raw(dir / "m.bin", dir / "m.json", values, 24, 2, 3, {"a", "b"});
  const auto m = load_embedding_matrix(dir / "m.bin", dir / "m.json");
  CHECK(m.rows() == 2);
  CHECK(m.dim() == 3);
  CHECK(m.row(0)[0] == doctest::Approx(0.6));
  CHECK(m.row(0)[1] == doctest::Approx(0.8));
  CHECK(m.row(0)[2] == 0.0f);
  CHECK(m.index_of("b") == 1);
  CHECK(m.index_of("zz") == -1);

  write_raw(dir / "short.bin", dir / "short.json", values, 23, 2, 3, {"a", "b"});
  CHECK(code_of([&] { load_embedding_matrix(dir / "short.bin", dir / "short.json"); }) == ErrorCode::LengthMismatch);

  write_raw(dir / "ids.bin", dir / "ids.json", values, 24, 2, 3, {"a"});
  CHECK(code_of([&] { load_embedding_matrix(dir / "ids.bin", dir / "ids.json"); }) == ErrorCode::CountMismatch);

  std::vector<float> bad = values;
  bad[4] = std::numeric_limits<float>::quiet_NaN();
  write_raw(dir / "nan.bin", dir / "nan.json", bad, 24, 2, 3, {"a", "b"});
  CHECK(code_of([&] { load_embedding_matrix(dir / "nan.bin", dir / "nan.json"); }) == ErrorCode::NonFinite);
}

TEST_CASE("save and load round-trip") {
  TempDir dir("embed");
  Rng rng(3);
  auto m = random_matrix(4, 5, rng, "d", ProviderSpec::parse("file:test"));
  m.normalize_rows();
  save_embedding_matrix(m, dir / "x.bin", dir / "x.json");
  CHECK(std::filesystem::file_size(dir / "x.bin") == 4 * 5 * 4);
  const auto back = load_embedding_matrix(dir / "x.bin", dir / "x.json");
  CHECK(back.ids() == m.ids());
  for (std::size_t i = 0; i < m.values().size(); ++i) CHECK(back.values()[i] == doctest::Approx(m.values()[i]).epsilon(1e-6));
}

TEST_CASE("score_against_categories examples") {
  const auto spec = ProviderSpec::hashed(1, 3);
  Rng rng(1);
  auto self = random_matrix(4, 3, rng, "x", spec);
  const auto s = score_against_categories(self, self);
  for (std::size_t i = 0; i < 4; ++i) CHECK(s.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));

  const EmbeddingMatrix defs({"c0", "c1", "c2"}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, spec);
  const EmbeddingMatrix doc({"d"}, {0, 1, 0}, 3, spec);
  const auto r = score_against_categories(doc, defs);
  CHECK(r.at(0, 0) == 0.0);
  CHECK(r.at(0, 1) == 1.0);
  CHECK(r.at(0, 2) == 0.0);
}

TEST_CASE("score_against_categories equals a brute-force oracle") {
  const auto spec = ProviderSpec::hashed(2, 6);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto docs = random_matrix(5, 6, rng, "d", spec);
    const auto defs = random_matrix(4, 6, rng, "c", spec);
    const auto s = score_against_categories(docs, defs);
    REQUIRE(s.rows() == 5);
    REQUIRE(s.cols() == 4);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double expect = testing::cosine_oracle(testing::to_double(docs.row(i)), testing::to_double(defs.row(k)));
        CHECK(std::abs(s.at(i, k) - expect) < 1e-9);
      }
    }
    // Unit rows: a plain matrix product gives the same scores.
    auto nd = docs;
    auto nc = defs;
    nd.normalize_rows();
    nc.normalize_rows();
    const auto u = score_against_categories(nd, nc);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        double dot = 0;
        for (std::size_t j = 0; j < 6; ++j) dot += static_cast<double>(nd.row(i)[j]) * nc.row(k)[j];
        CHECK(std::abs(u.at(i, k) - dot) < 1e-9);
      }
    }
  }
}

TEST_CASE("score_against_categories rejects mixed providers") {
  Rng rng(4);
  const auto a = random_matrix(2, 4, rng, "d", ProviderSpec::hashed(1, 4));
  const auto b = random_matrix(2, 4, rng, "c", ProviderSpec::hashed(2, 4));
  CHECK(code_of([&] { score_against_categories(a, b); }) == ErrorCode::ProviderMismatch);
}

TEST_CASE("EmbeddingMatrix validation and selection") {
  const auto spec = ProviderSpec::hashed(1, 2);
  CHECK(code_of([&] { EmbeddingMatrix({"a", "a"}, {1, 0, 0, 1}, 2, spec); }) == ErrorCode::DuplicateId);
  CHECK_THROWS_AS(EmbeddingMatrix({"a"}, {1, 0, 0}, 2, spec), Error);
  const EmbeddingMatrix m({"a", "b", "c"}, {1, 0, 0, 1, 1, 1}, 2, spec);
  const std::vector<std::string> want = {"c", "a"};
  const auto s = m.select(want);
  CHECK(s.ids() == want);
  CHECK(s.row(1)[0] == 1.0f);
  const std::vector<std::string> missing = {"zz"};
  CHECK(code_of([&] { m.select(missing); }) == ErrorCode::MissingProvider);
}

TEST_CASE("Embedder reads file-backed providers") {
  TempDir dir("embed");
  const auto spec = ProviderSpec::parse("file:toy");
  const EmbeddingMatrix docs({"d1", "d2"}, {1, 0, 0, 2}, 2, spec);
  const EmbeddingMatrix defs({"c1"}, {1, 1}, 2, spec);
  save_embedding_matrix(docs, dir / "toy.docs.bin", dir / "toy.docs.json");
  save_embedding_matrix(defs, dir / "toy.defs.bin", dir / "toy.defs.json");

  Embedder embedder(default_stopwords(), dir.path());
  DocumentCollection corpus({{"d2", "", "text", std::nullopt, {}}});
  const auto got = embedder.embed_documents(spec, corpus);
  CHECK(got.ids() == std::vector<std::string>{"d2"});
  CHECK(got.row(0)[1] == doctest::Approx(1.0));
  const auto cats = embedder.embed_categories(spec, {{"c1", "C", Taxonomy::hazard, std::nullopt, "def", std::nullopt}});
  CHECK(cats.row(0)[0] == doctest::Approx(std::sqrt(0.5)));

  CHECK(code_of([&] { embedder.embed_documents(ProviderSpec::parse("file:toy:3"), corpus); }) ==
        ErrorCode::DimensionMismatch);
  DocumentCollection unknown({{"d9", "", "text", std::nullopt, {}}});
  CHECK(code_of([&] { embedder.embed_documents(spec, unknown); }) == ErrorCode::MissingProvider);
}
