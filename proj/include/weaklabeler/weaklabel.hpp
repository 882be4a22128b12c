#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"

namespace weaklabeler {

/// One vote source: cosine(doc, definition) under `provider` > threshold.
struct LabelingFunctionSpec {
  std::string lf_id;
  ProviderSpec provider;
  std::string cat_id;
  double threshold = 0.4;
};

/// Binary votes, documents x labeling functions, row-major.
struct VoteMatrix {
  std::vector<std::string> doc_ids;
  std::vector<std::string> lf_ids;
  std::vector<std::uint8_t> votes;

  std::size_t rows() const noexcept { return doc_ids.size(); }
  std::size_t cols() const noexcept { return lf_ids.size(); }
  std::uint8_t at(std::size_t i, std::size_t j) const { return votes[i * cols() + j]; }
  std::span<const std::uint8_t> row(std::size_t i) const {
    return std::span<const std::uint8_t>(votes).subspan(i * cols(), cols());
  }

  /// Throws InvalidArgument unless shapes agree, there are at least two
  /// labeling functions and every entry is 0 or 1.
  void validate() const;
};

/// Two-class conditionally independent model: prior = P(y=1),
/// s[j] = P(vote_j=1 | y=1), t[j] = P(vote_j=0 | y=0).
struct LabelModelParams {
  std::string cat_id;
  double prior = 0.5;
  std::vector<double> s;
  std::vector<double> t;
  std::vector<double> log_likelihood_trace;
  std::size_t iterations = 0;
  bool converged = false;
  /// "label_model", or "majority_vote" when a category fell back to it.
  std::string method = "label_model";
};

inline constexpr double kParamClamp = 1e-3;

struct ProbabilisticLabel {
  std::string doc_id;
  std::string cat_id;
  double p = 0.0;
  int hard = 0;

  bool operator==(const ProbabilisticLabel&) const = default;
};

/// Hard label rule: p >= 0.5 is positive, so exact ties go to 1.
inline int harden(double p) { return p >= 0.5 ? 1 : 0; }

struct MultiLabelAssignment {
  std::string doc_id;
  std::vector<std::string> hazard;
  std::vector<std::string> ncf;

  std::vector<std::string>& labels(Taxonomy taxonomy) {
    return taxonomy == Taxonomy::hazard ? hazard : ncf;
  }
  const std::vector<std::string>& labels(Taxonomy taxonomy) const {
    return taxonomy == Taxonomy::hazard ? hazard : ncf;
  }
  bool has(Taxonomy taxonomy, const std::string& cat_id) const;

  bool operator==(const MultiLabelAssignment&) const = default;
};

/// Row order follows `docs_by_provider.at(lfs[0].provider.provider_id)`;
/// other providers are matched by doc id. Throws MissingProvider when an LF's
/// provider has no document or definition embeddings.
VoteMatrix apply_labeling_functions(
    const std::map<std::string, EmbeddingMatrix>& docs_by_provider,
    const std::map<std::string, EmbeddingVector>& definition_by_provider,
    std::span<const LabelingFunctionSpec> lfs);

/// Fraction of positive votes per row.
std::vector<ProbabilisticLabel> majority_vote(const VoteMatrix& votes,
                                              const std::string& cat_id = {});

/// Observed-data log-likelihood of `votes` under `params`.
double log_likelihood(const LabelModelParams& params, const VoteMatrix& votes);

/// P(y_i = 1 | row i) for every row.
std::vector<double> posteriors(const LabelModelParams& params, const VoteMatrix& votes);

struct LabelModelOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
};

/// Fits the model by EM, initialized from majority-vote posteriors.
///
/// Requires at least 10 documents (TooFewDocuments). A matrix whose rows are
/// all identical carries no agreement signal and raises Unidentifiable; use
/// majority_vote there. After fitting, the label orientation is chosen so
/// that the mean of (s_j + t_j)/2 is at least 0.5.
LabelModelParams fit_label_model(const VoteMatrix& votes, const LabelModelOptions& options = {});

/// Throws InvalidArgument when the LF count differs from the fitted one.
std::vector<ProbabilisticLabel> infer_probabilistic_labels(const LabelModelParams& params,
                                                           const VoteMatrix& votes,
                                                           const std::string& cat_id);

/// Joins per-category labels into one label set per document.
/// `per_category[k]` holds the labels for `cat_order[k]`; every list must
/// cover the same documents (InconsistentCoverage otherwise). Output is
/// sorted by doc_id; labels within a document follow `cat_order`.
std::vector<MultiLabelAssignment> union_multilabel(
    std::span<const std::vector<ProbabilisticLabel>> per_category,
    std::span<const std::string> cat_order, Taxonomy taxonomy);

void write_labels(const std::filesystem::path& path, std::span<const ProbabilisticLabel> labels);
std::vector<ProbabilisticLabel> read_labels(const std::filesystem::path& path);

void write_params(const std::filesystem::path& path, const LabelModelParams& params);
LabelModelParams read_params(const std::filesystem::path& path);

}  // namespace weaklabeler
