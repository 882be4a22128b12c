#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace weaklabeler {

enum class Taxonomy { hazard, ncf };

std::string_view to_string(Taxonomy taxonomy);
Taxonomy parse_taxonomy(std::string_view text);

struct Document {
  std::string doc_id;
  std::string title;
  std::string abstract;
  std::optional<int> year;
  std::vector<std::string> fields_of_study;
};

/// Documents in file order. Immutable once loaded.
class DocumentCollection {
 public:
  DocumentCollection() = default;
  /// Throws DuplicateId if two documents share an id.
  explicit DocumentCollection(std::vector<Document> docs);

  const std::vector<Document>& docs() const noexcept { return docs_; }
  std::size_t size() const noexcept { return docs_.size(); }
  bool empty() const noexcept { return docs_.empty(); }
  const Document& operator[](std::size_t i) const { return docs_[i]; }
  auto begin() const noexcept { return docs_.begin(); }
  auto end() const noexcept { return docs_.end(); }

  const Document* find(std::string_view doc_id) const;
  std::vector<std::string> ids() const;

  /// Documents whose id is in `keep`, preserving this collection's order.
  DocumentCollection subset(const std::unordered_set<std::string>& keep) const;

  // Ingestion bookkeeping for skip_bad loads.
  std::size_t skipped_count = 0;
  std::vector<std::size_t> skipped_lines;  // 1-based

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class LoadPolicy { skip_bad, fail_fast };

/// Reads a JSON-lines file of S2ORC-shaped records (`paper_id`, `title`,
/// `abstract`, optional `year` and `fields_of_study`). Records with an empty
/// id or abstract count as malformed. Blank lines are ignored.
DocumentCollection load_documents(const std::filesystem::path& path, LoadPolicy policy);

void write_documents(const std::filesystem::path& path, const DocumentCollection& docs);

struct CategoryDefinition {
  std::string cat_id;
  std::string name;
  Taxonomy taxonomy = Taxonomy::hazard;
  std::optional<std::string> group;
  std::string definition;
  /// Per-category labeling-function threshold override.
  std::optional<double> threshold;
};

/// Category definitions in file order. File order is the classifier-chain
/// order, so it is never re-sorted.
class CategorySet {
 public:
  CategorySet() = default;
  /// Throws EmptyDefinition or DuplicateCategory.
  explicit CategorySet(std::vector<CategoryDefinition> entries);

  const std::vector<CategoryDefinition>& entries() const noexcept { return entries_; }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<CategoryDefinition> of(Taxonomy taxonomy) const;
  std::vector<std::string> ids(Taxonomy taxonomy) const;
  const CategoryDefinition* find(Taxonomy taxonomy, std::string_view cat_id) const;

  /// Concatenation in argument order; the same uniqueness rules apply.
  static CategorySet merge(const CategorySet& a, const CategorySet& b);

 private:
  std::vector<CategoryDefinition> entries_;
};

CategorySet load_categories(const std::filesystem::path& path);

using TokenList = std::vector<std::string>;
using StopwordSet = std::unordered_set<std::string>;

/// Bundled English stopword list.
const StopwordSet& default_stopwords();

/// One token per line; blank lines and surrounding whitespace ignored.
/// Entries are lowercased.
StopwordSet load_stopwords(const std::filesystem::path& path);

/// Lowercase, split on anything that is not a letter or digit, then drop
/// tokens shorter than two code points, all-digit tokens, and stopwords.
TokenList tokenize(std::string_view text, const StopwordSet& stopwords);

}  // namespace weaklabeler
