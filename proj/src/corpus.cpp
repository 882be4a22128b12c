#include "weaklabeler/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>

#include "json.hpp"
#include "jsonio.hpp"
#include "weaklabeler/error.hpp"

namespace weaklabeler {

using nlohmann::json;

std::string_view to_string(Taxonomy taxonomy) {
  return taxonomy == Taxonomy::hazard ? "hazard" : "ncf";
}

Taxonomy parse_taxonomy(std::string_view text) {
  if (text == "hazard") return Taxonomy::hazard;
  if (text == "ncf") return Taxonomy::ncf;
  throw Error(ErrorCode::InvalidArgument, "unknown taxonomy '" + std::string(text) + "'");
}

DocumentCollection::DocumentCollection(std::vector<Document> docs) : docs_(std::move(docs)) {
  index_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!index_.emplace(docs_[i].doc_id, i).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate doc_id '" + docs_[i].doc_id + "'");
    }
  }
}

const Document* DocumentCollection::find(std::string_view doc_id) const {
  auto it = index_.find(std::string(doc_id));
  return it == index_.end() ? nullptr : &docs_[it->second];
}

std::vector<std::string> DocumentCollection::ids() const {
  std::vector<std::string> out;
  out.reserve(docs_.size());
  for (const auto& d : docs_) out.push_back(d.doc_id);
  return out;
}

DocumentCollection DocumentCollection::subset(const std::unordered_set<std::string>& keep) const {
  std::vector<Document> out;
  for (const auto& d : docs_) {
    if (keep.count(d.doc_id)) out.push_back(d);
  }
  return DocumentCollection(std::move(out));
}

namespace {

// Returns nullopt for anything that is not a usable record.
std::optional<Document> parse_document(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
  if (!j.is_object()) return std::nullopt;

  Document doc;
  auto id = j.find("paper_id");
  if (id == j.end()) return std::nullopt;
  if (id->is_string()) {
    doc.doc_id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    doc.doc_id = std::to_string(id->get<std::int64_t>());
  } else {
    return std::nullopt;
  }

  auto abstract = j.find("abstract");
  if (abstract == j.end() || !abstract->is_string()) return std::nullopt;
  doc.abstract = abstract->get<std::string>();
  if (doc.doc_id.empty() || doc.abstract.find_first_not_of(" \t\r\n") == std::string::npos) {
    return std::nullopt;
  }

  if (auto title = j.find("title"); title != j.end() && !title->is_null()) {
    if (!title->is_string()) return std::nullopt;
    doc.title = title->get<std::string>();
  }
  if (auto year = j.find("year"); year != j.end() && !year->is_null()) {
    if (!year->is_number_integer()) return std::nullopt;
    doc.year = year->get<int>();
  }
  if (auto fos = j.find("fields_of_study"); fos != j.end() && !fos->is_null()) {
    if (!fos->is_array()) return std::nullopt;
    for (const auto& f : *fos) {
      if (!f.is_string()) return std::nullopt;
      doc.fields_of_study.push_back(f.get<std::string>());
    }
  }
  return doc;
}

}  // namespace

DocumentCollection load_documents(const std::filesystem::path& path, LoadPolicy policy) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());

  std::vector<Document> docs;
  std::vector<std::size_t> skipped;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto doc = parse_document(line);
    if (!doc) {
      if (policy == LoadPolicy::fail_fast) {
        throw Error(ErrorCode::Parse, path.string() + ":" + std::to_string(lineno) + ": malformed record");
      }
      skipped.push_back(lineno);
      continue;
    }
    if (!seen.insert(doc->doc_id).second) {
      throw Error(ErrorCode::DuplicateId, path.string() + ":" + std::to_string(lineno) +
                                              ": duplicate doc_id '" + doc->doc_id + "'");
    }
    docs.push_back(std::move(*doc));
  }
  if (in.bad()) throw Error(ErrorCode::Io, "read error on " + path.string());

  DocumentCollection out(std::move(docs));
  out.skipped_count = skipped.size();
  out.skipped_lines = std::move(skipped);
  return out;
}

void write_documents(const std::filesystem::path& path, const DocumentCollection& docs) {
  std::vector<json> rows;
  rows.reserve(docs.size());
  for (const auto& d : docs) {
    json j = {{"paper_id", d.doc_id}, {"title", d.title}, {"abstract", d.abstract}};
    if (d.year) j["year"] = *d.year;
    if (!d.fields_of_study.empty()) j["fields_of_study"] = d.fields_of_study;
    rows.push_back(std::move(j));
  }
  detail::write_jsonl(path, rows);
}

CategorySet::CategorySet(std::vector<CategoryDefinition> entries) : entries_(std::move(entries)) {
  std::set<std::pair<Taxonomy, std::string>> seen;
  for (const auto& c : entries_) {
    if (c.cat_id.empty()) throw Error(ErrorCode::InvalidArgument, "category with empty id");
    if (c.definition.find_first_not_of(" \t\r\n") == std::string::npos) {
      throw Error(ErrorCode::EmptyDefinition, "category '" + c.cat_id + "' has an empty definition");
    }
    if (!seen.emplace(c.taxonomy, c.cat_id).second) {
      throw Error(ErrorCode::DuplicateCategory,
                  "duplicate " + std::string(to_string(c.taxonomy)) + " category '" + c.cat_id + "'");
    }
    if (c.threshold && (*c.threshold < -1.0 || *c.threshold > 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "category '" + c.cat_id + "' threshold outside [-1, 1]");
    }
  }
}

std::vector<CategoryDefinition> CategorySet::of(Taxonomy taxonomy) const {
  std::vector<CategoryDefinition> out;
  for (const auto& c : entries_) {
    if (c.taxonomy == taxonomy) out.push_back(c);
  }
  return out;
}

std::vector<std::string> CategorySet::ids(Taxonomy taxonomy) const {
  std::vector<std::string> out;
  for (const auto& c : entries_) {
    if (c.taxonomy == taxonomy) out.push_back(c.cat_id);
  }
  return out;
}

const CategoryDefinition* CategorySet::find(Taxonomy taxonomy, std::string_view cat_id) const {
  for (const auto& c : entries_) {
    if (c.taxonomy == taxonomy && c.cat_id == cat_id) return &c;
  }
  return nullptr;
}

CategorySet CategorySet::merge(const CategorySet& a, const CategorySet& b) {
  auto all = a.entries_;
  all.insert(all.end(), b.entries_.begin(), b.entries_.end());
  return CategorySet(std::move(all));
}

CategorySet load_categories(const std::filesystem::path& path) {
  const json j = detail::read_json(path);
  if (!j.is_array()) throw Error(ErrorCode::Parse, path.string() + ": expected a JSON array");

  std::vector<CategoryDefinition> entries;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& e = j[i];
    const auto where = path.string() + "[" + std::to_string(i) + "]";
    try {
      CategoryDefinition c;
      c.cat_id = e.at("id").get<std::string>();
      c.name = e.value("name", c.cat_id);
      c.taxonomy = parse_taxonomy(e.at("taxonomy").get<std::string>());
      if (auto g = e.find("group"); g != e.end() && !g->is_null()) c.group = g->get<std::string>();
      c.definition = e.value("definition", std::string{});
      if (auto t = e.find("threshold"); t != e.end() && !t->is_null()) c.threshold = t->get<double>();
      entries.push_back(std::move(c));
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::Parse, where + ": " + ex.what());
    }
  }
  return CategorySet(std::move(entries));
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  StopwordSet out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    std::string word = line.substr(b, e - b + 1);
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.insert(std::move(word));
  }
  return out;
}

namespace {

constexpr char32_t kInvalid = 0xFFFFFFFF;

// Decodes one code point starting at `i`, advancing `i`. Malformed input
// yields kInvalid and advances by one byte.
char32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  std::size_t len;
  char32_t cp;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return kInvalid;
  }
  if (i + len > s.size()) {
    ++i;
    return kInvalid;
  }
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) {
      ++i;
      return kInvalid;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += len;
  return cp;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

bool is_word_char(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
  }
  if (cp == kInvalid) return false;
  // Non-ASCII punctuation, symbol and space blocks split; other scripts count
  // as letters.
  if (cp <= 0xBF || cp == 0xD7 || cp == 0xF7) return false;
  if (cp >= 0x2000 && cp <= 0x2BFF) return false;
  if (cp >= 0x3000 && cp <= 0x303F) return false;
  if (cp >= 0xFE10 && cp <= 0xFE6F) return false;
  if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
  if (cp == 0xFEFF) return false;
  return true;
}

char32_t to_lower(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  if (cp < 0xC0) return cp;
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
  if ((cp >= 0x100 && cp <= 0x137) || (cp >= 0x14A && cp <= 0x177)) return (cp % 2 == 0) ? cp + 1 : cp;
  if ((cp >= 0x139 && cp <= 0x148) || (cp >= 0x179 && cp <= 0x17E)) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2) return cp + 0x20;
  if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
  if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
  return cp;
}

}  // namespace

TokenList tokenize(std::string_view text, const StopwordSet& stopwords) {
  TokenList tokens;
  std::string current;
  std::size_t length = 0;
  bool all_digits = true;

  auto flush = [&] {
    if (length >= 2 && !all_digits && !stopwords.count(current)) tokens.push_back(current);
    current.clear();
    length = 0;
    all_digits = true;
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const char32_t cp = decode_utf8(text, i);
    if (!is_word_char(cp)) {
      flush();
      continue;
    }
    append_utf8(current, to_lower(cp));
    ++length;
    if (cp < '0' || cp > '9') all_digits = false;
  }
  flush();
  return tokens;
}

}  // namespace weaklabeler
