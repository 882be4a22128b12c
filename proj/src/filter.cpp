#include "weaklabeler/filter.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "jsonio.hpp"
#include "weaklabeler/error.hpp"

namespace weaklabeler {

using nlohmann::json;

MaxScore max_category_score(std::span<const double> row) {
  if (row.empty()) throw Error(ErrorCode::InvalidArgument, "max over an empty score row");
  MaxScore best{row[0], 0};
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > best.score) best = {row[k], k};
  }
  return best;
}

int apply_flag(double max_score, double threshold) { return max_score > threshold ? 1 : 0; }

std::vector<FilterDecision> decide(const ScoreMatrix& scores, double threshold,
                                   const std::string& provider_id) {
  // Thresholds outside [-1, 1] are legal and mean "keep all" or "keep none".
  if (!std::isfinite(threshold)) throw Error(ErrorCode::InvalidArgument, "non-finite threshold");
  std::vector<FilterDecision> out;
  out.reserve(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto best = max_category_score(scores.row(i));
    out.push_back({scores.doc_ids[i], best.score, scores.cat_ids[best.index],
                   apply_flag(best.score, threshold), threshold, provider_id});
  }
  return out;
}

FilterResult filter_corpus(const DocumentCollection& docs,
                           const std::vector<CategoryDefinition>& categories,
                           const ProviderSpec& provider, double threshold,
                           const Embedder& embedder) {
  FilterResult result;
  if (docs.empty()) return result;
  const auto doc_emb = embedder.embed_documents(provider, docs);
  const auto def_emb = embedder.embed_categories(provider, categories);
  const auto scores = score_against_categories(doc_emb, def_emb);

  result.decisions = decide(scores, threshold, provider.provider_id);
  std::unordered_set<std::string> keep;
  for (const auto& d : result.decisions) {
    if (d.flag) keep.insert(d.doc_id);
  }
  result.kept = docs.subset(keep);
  std::sort(result.decisions.begin(), result.decisions.end(),
            [](const FilterDecision& a, const FilterDecision& b) { return a.doc_id < b.doc_id; });
  return result;
}

bool decisions_replay(std::span<const FilterDecision> decisions) {
  return std::all_of(decisions.begin(), decisions.end(), [](const FilterDecision& d) {
    return apply_flag(d.max_score, d.threshold) == d.flag;
  });
}

void write_decisions(const std::filesystem::path& path, std::span<const FilterDecision> decisions) {
  std::vector<json> rows;
  rows.reserve(decisions.size());
  for (const auto& d : decisions) {
    rows.push_back({{"doc_id", d.doc_id},
                    {"max_score", d.max_score},
                    {"argmax_cat", d.argmax_cat},
                    {"flag", d.flag},
                    {"threshold", d.threshold},
                    {"provider", d.provider}});
  }
  detail::write_jsonl(path, rows);
}

std::vector<FilterDecision> read_decisions(const std::filesystem::path& path) {
  std::vector<FilterDecision> out;
  for (const auto& j : detail::read_jsonl(path)) {
    try {
      out.push_back({j.at("doc_id").get<std::string>(), j.at("max_score").get<double>(),
                     j.at("argmax_cat").get<std::string>(), j.at("flag").get<int>(),
                     j.at("threshold").get<double>(), j.at("provider").get<std::string>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace weaklabeler
