#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "weaklabeler/error.hpp"

using namespace weaklabeler;
using testing::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

std::string join(const TokenList& t) {
  std::string out;
  for (const auto& s : t) out += (out.empty() ? "" : " ") + s;
  return out;
}

}  // namespace

TEST_CASE("load_documents reads well-formed lines") {
  TempDir dir("corpus");
  write_text(dir / "d.jsonl",
             R"({"paper_id": "a", "title": "T", "abstract": "first text", "year": 2001, "fields_of_study": ["X"]})"
             "\n"
             R"({"paper_id": 42, "abstract": "second"})"
             "\n"
             R"({"paper_id": "c", "title": "", "abstract": "third"})"
             "\n");
  const auto docs = load_documents(dir / "d.jsonl", LoadPolicy::fail_fast);
  REQUIRE(docs.size() == 3);
  CHECK(docs[0].doc_id == "a");
  CHECK(docs[0].year == 2001);
  CHECK(docs[0].fields_of_study == std::vector<std::string>{"X"});
  CHECK(docs[1].doc_id == "42");
  CHECK_FALSE(docs[1].year.has_value());
  CHECK(docs.skipped_count == 0);
}

TEST_CASE("skip_bad counts one malformed line among three") {
  TempDir dir("corpus");
  write_text(dir / "d.jsonl",
             "{\"paper_id\": \"a\", \"abstract\": \"x y\"}\n"
             "{not json\n"
             "{\"paper_id\": \"b\", \"abstract\": \"z\"}\n");
  const auto docs = load_documents(dir / "d.jsonl", LoadPolicy::skip_bad);
  CHECK(docs.size() == 2);
  CHECK(docs.skipped_count == 1);
  CHECK(docs.skipped_lines == std::vector<std::size_t>{2});
  CHECK(code_of([&] { load_documents(dir / "d.jsonl", LoadPolicy::fail_fast); }) == ErrorCode::Parse);
}

TEST_CASE("empty abstracts and ids count as malformed") {
  TempDir dir("corpus");
  write_text(dir / "d.jsonl",
             "{\"paper_id\": \"a\", \"abstract\": \"   \"}\n"
             "{\"paper_id\": \"\", \"abstract\": \"text\"}\n"
             "{\"abstract\": \"text\"}\n"
             "\n"
             "{\"paper_id\": \"ok\", \"abstract\": \"text\"}\n");
  const auto docs = load_documents(dir / "d.jsonl", LoadPolicy::skip_bad);
  CHECK(docs.size() == 1);
  CHECK(docs.skipped_count == 3);
}

TEST_CASE("duplicate doc_id is fatal under either policy") {
  TempDir dir("corpus");
  write_text(dir / "d.jsonl",
             "{\"paper_id\": \"a\", \"abstract\": \"x\"}\n"
             "{\"paper_id\": \"a\", \"abstract\": \"y\"}\n");
  CHECK(code_of([&] { load_documents(dir / "d.jsonl", LoadPolicy::skip_bad); }) == ErrorCode::DuplicateId);
  CHECK(code_of([&] { load_documents(dir / "d.jsonl", LoadPolicy::fail_fast); }) == ErrorCode::DuplicateId);
}

TEST_CASE("unreadable path") {
  CHECK(code_of([] { load_documents("/nonexistent/docs.jsonl", LoadPolicy::skip_bad); }) == ErrorCode::Io);
}

TEST_CASE("skip_bad result is the subset of a cleaned file") {
  TempDir dir("corpus");
  const std::vector<std::string> good = {
      R"({"paper_id": "a", "abstract": "alpha"})", R"({"paper_id": "b", "abstract": "beta"})",
      R"({"paper_id": "c", "abstract": "gamma"})", R"({"paper_id": "d", "abstract": "delta"})"};
  const std::vector<std::string> bad = {"[1,2]", "{\"paper_id\": \"e\"}", "garbage", "{\"abstract\": 3}"};
  for (int trial = 0; trial < 20; ++trial) {
    weaklabeler::Rng rng(static_cast<std::uint64_t>(trial));
    std::string mixed, clean;
    for (const auto& g : good) {
      if (rng.bernoulli(0.5)) mixed += bad[rng.below(bad.size())] + "\n";
      mixed += g + "\n";
      clean += g + "\n";
    }
    write_text(dir / "mixed.jsonl", mixed);
    write_text(dir / "clean.jsonl", clean);
    const auto a = load_documents(dir / "mixed.jsonl", LoadPolicy::skip_bad);
    const auto b = load_documents(dir / "clean.jsonl", LoadPolicy::skip_bad);
    CHECK(a.ids() == b.ids());
  }
}

TEST_CASE("write_documents round-trips") {
  TempDir dir("corpus");
  DocumentCollection docs({{"x1", "Title", "Body text", 1999, {"Geology"}}, {"x2", "", "Other", std::nullopt, {}}});
  write_documents(dir / "out.jsonl", docs);
  const auto back = load_documents(dir / "out.jsonl", LoadPolicy::fail_fast);
  REQUIRE(back.size() == 2);
  CHECK(back[0].title == "Title");
  CHECK(back[0].year == 1999);
  CHECK(back[1].abstract == "Other");
}

TEST_CASE("bundled category files") {
  const auto hazards = load_categories(testing::data_dir() / "categories" / "hazards.json");
  const auto ncfs = load_categories(testing::data_dir() / "categories" / "ncfs.json");
  CHECK(hazards.ids(Taxonomy::hazard).size() == 18);
  CHECK(hazards.ids(Taxonomy::ncf).empty());
  CHECK(ncfs.ids(Taxonomy::ncf).size() == 55);
  std::map<std::string, int> groups;
  for (const auto& c : ncfs) groups[c.group.value_or("")]++;
  CHECK(groups == std::map<std::string, int>{{"connect", 9}, {"distribute", 9}, {"manage", 24}, {"supply", 13}});
}

TEST_CASE("category file order is preserved") {
  TempDir dir("corpus");
  write_text(dir / "c.json", R"([
    {"id": "zeta", "taxonomy": "hazard", "definition": "z"},
    {"id": "alpha", "taxonomy": "hazard", "definition": "a"},
    {"id": "mid", "name": "Middle", "taxonomy": "ncf", "group": "supply", "definition": "m", "threshold": 0.3}
  ])");
  const auto cats = load_categories(dir / "c.json");
  CHECK(cats.ids(Taxonomy::hazard) == std::vector<std::string>{"zeta", "alpha"});
  const auto* mid = cats.find(Taxonomy::ncf, "mid");
  REQUIRE(mid != nullptr);
  CHECK(mid->name == "Middle");
  CHECK(mid->threshold == doctest::Approx(0.3));
  CHECK(cats.find(Taxonomy::hazard, "mid") == nullptr);
}

TEST_CASE("category validation") {
  TempDir dir("corpus");
  write_text(dir / "dup.json", R"([{"id": "a", "taxonomy": "hazard", "definition": "x"},
                                    {"id": "a", "taxonomy": "hazard", "definition": "y"}])");
  CHECK(code_of([&] { load_categories(dir / "dup.json"); }) == ErrorCode::DuplicateCategory);

  write_text(dir / "cross.json", R"([{"id": "a", "taxonomy": "hazard", "definition": "x"},
                                      {"id": "a", "taxonomy": "ncf", "definition": "y"}])");
  CHECK(load_categories(dir / "cross.json").size() == 2);

  write_text(dir / "empty.json", R"([{"id": "a", "taxonomy": "hazard", "definition": "  "}])");
  CHECK(code_of([&] { load_categories(dir / "empty.json"); }) == ErrorCode::EmptyDefinition);

  write_text(dir / "tax.json", R"([{"id": "a", "taxonomy": "weather", "definition": "x"}])");
  CHECK_THROWS_AS(load_categories(dir / "tax.json"), Error);
}

TEST_CASE("tokenize examples") {
  CHECK(tokenize("The flood-risk, and THE dams!", {"the", "and"}) == TokenList{"flood", "risk", "dams"});
  CHECK(tokenize("", {}).empty());
  CHECK(tokenize("2021 a CO2", {"a"}) == TokenList{"co2"});
}

TEST_CASE("tokenize handles non-ASCII text") {
  CHECK(tokenize("Ökosystem ÉTÉ \u2014 Δέλτα; Москва", {}) == TokenList{"ökosystem", "été", "δέλτα", "москва"});
  CHECK(tokenize("x ß", {}) == TokenList{});
  CHECK(tokenize("naïve–approach", {}) == TokenList{"naïve", "approach"});
}

TEST_CASE("tokenize is idempotent on its joined output") {
  const std::vector<std::string> samples = {
      "Heavy RAINFALL in 2019 caused flash-flooding; 12 dams failed.",
      "Sea-level rise (SLR) & coastal erosion: a review of 300 studies",
      "Ökosystem Été ÅLAND 42nd",
      "a b c 1 22 333 x1 y22",
  };
  for (const auto& s : samples) {
    const auto once = tokenize(s, default_stopwords());
    CHECK(tokenize(join(once), default_stopwords()) == once);
  }
  weaklabeler::Rng rng(5);
  const std::string alphabet = "abcXYZ019 -_,.!?é";
  for (int i = 0; i < 200; ++i) {
    std::string s;
    const auto len = rng.below(40);
    for (std::size_t k = 0; k < len; ++k) s += alphabet[rng.below(alphabet.size() - 1)];
    const auto once = tokenize(s, {"abc"});
    CHECK(tokenize(join(once), {"abc"}) == once);
  }
}

TEST_CASE("default stopwords") {
  const auto& sw = default_stopwords();
  CHECK(sw.size() > 150);
  CHECK(sw.count("the") == 1);
  CHECK(sw.count("flood") == 0);

  TempDir dir("corpus");
  write_text(dir / "sw.txt", "  Foo\n\nbar \n");
  CHECK(load_stopwords(dir / "sw.txt") == StopwordSet{"foo", "bar"});
}
