#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"

namespace weaklabeler {

inline constexpr double kDefaultThreshold = 0.4;

struct FilterDecision {
  std::string doc_id;
  double max_score = 0.0;
  std::string argmax_cat;
  int flag = 0;
  double threshold = kDefaultThreshold;
  std::string provider;

  bool operator==(const FilterDecision&) const = default;
};

struct MaxScore {
  double score;
  std::size_t index;  // first position attaining the maximum
};

/// Throws InvalidArgument on an empty row.
MaxScore max_category_score(std::span<const double> row);

/// 1 iff max_score > threshold. Strict: a score equal to the threshold is 0.
int apply_flag(double max_score, double threshold);

/// Decisions for every row of `scores`, in row order.
std::vector<FilterDecision> decide(const ScoreMatrix& scores, double threshold,
                                   const std::string& provider_id);

struct FilterResult {
  DocumentCollection kept;
  std::vector<FilterDecision> decisions;  // one per input document, sorted by doc_id
};

/// Scores every document against `categories` under `provider` and keeps the
/// ones whose best score clears `threshold`. Running it with the NCF
/// categories over the hazard-stage `kept` set gives the two-stage subset.
FilterResult filter_corpus(const DocumentCollection& docs,
                           const std::vector<CategoryDefinition>& categories,
                           const ProviderSpec& provider, double threshold,
                           const Embedder& embedder);

/// Recomputes each flag from the stored score and threshold.
bool decisions_replay(std::span<const FilterDecision> decisions);

void write_decisions(const std::filesystem::path& path, std::span<const FilterDecision> decisions);
std::vector<FilterDecision> read_decisions(const std::filesystem::path& path);

}  // namespace weaklabeler
