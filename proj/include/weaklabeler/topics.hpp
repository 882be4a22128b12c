#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "weaklabeler/corpus.hpp"
#include "weaklabeler/matrix.hpp"
#include "weaklabeler/weaklabel.hpp"

namespace weaklabeler {

/// Documents per (hazard, NCF) label pair; rows are hazards, columns NCFs.
struct PairCountMatrix {
  std::vector<std::string> hazard_ids;
  std::vector<std::string> ncf_ids;
  std::vector<std::size_t> counts;

  std::size_t at(std::size_t h, std::size_t n) const { return counts[h * ncf_ids.size() + n]; }
};

struct PairCounts {
  PairCountMatrix full;
  /// Drops every row, and every column, whose cells are all below min_cell
  /// in the full matrix.
  PairCountMatrix filtered;
};

inline constexpr std::size_t kDefaultMinCell = 100;

PairCounts pair_count_matrix(std::span<const MultiLabelAssignment> assignments,
                             std::span<const std::string> hazard_ids,
                             std::span<const std::string> ncf_ids,
                             std::size_t min_cell = kDefaultMinCell);

void write_pair_csv(const std::filesystem::path& path, const PairCountMatrix& matrix);

/// Ids of documents labeled with both categories, sorted. Throws
/// UnknownCategory when either id is not declared.
std::vector<std::string> select_pair_subset(std::span<const MultiLabelAssignment> assignments,
                                            const std::string& hazard, const std::string& ncf,
                                            std::span<const std::string> hazard_ids,
                                            std::span<const std::string> ncf_ids);

struct Reduction {
  Matrix reduced;                       // n x target_dim
  Matrix components;                    // target_dim x dim
  std::vector<double> variances;        // per component
  double total_variance = 0.0;
  double captured_variance_ratio = 0.0; // sum(variances) / total_variance
};

/// Swappable dimensionality-reduction stage.
class DimensionReducer {
 public:
  virtual ~DimensionReducer() = default;
  virtual Reduction reduce(const Matrix& data, std::size_t target_dim) const = 0;
};

/// Principal components by seeded power iteration with deflation.
class PcaReducer final : public DimensionReducer {
 public:
  explicit PcaReducer(std::uint64_t seed = 0, double tol = 1e-9, std::size_t max_iters = 1000)
      : seed_(seed), tol_(tol), max_iters_(max_iters) {}
  Reduction reduce(const Matrix& data, std::size_t target_dim) const override;

 private:
  std::uint64_t seed_;
  double tol_;
  std::size_t max_iters_;
};

inline constexpr std::size_t kDefaultTargetDim = 5;

/// Centers rows and projects onto the top `target_dim` principal directions.
/// Each component's largest-magnitude loading is made positive. Throws
/// InvalidArgument when target_dim >= dim and TooFewDocuments when there are
/// fewer rows than target_dim.
Reduction reduce_dimensions(const Matrix& data, std::size_t target_dim = kDefaultTargetDim,
                            std::uint64_t seed = 0);

inline constexpr int kNoiseTopic = -1;

struct Cluster {
  int topic_id = kNoiseTopic;
  std::vector<std::string> members;  // sorted by doc_id
};

struct Clustering {
  std::vector<Cluster> clusters;    // topic ids 0..n-1
  std::vector<std::string> noise;   // sorted by doc_id
};

/// Swappable clustering stage.
class Clusterer {
 public:
  virtual ~Clusterer() = default;
  virtual Clustering cluster(const Matrix& points, std::span<const std::string> doc_ids) const = 0;
};

inline constexpr double kDefaultEps = 0.5;
inline constexpr std::size_t kDefaultMinPts = 5;

/// Flat density clustering: a point with at least min_pts points (itself
/// included) within Euclidean distance eps is a core point; clusters are the
/// sets density-reachable from core points. Points are visited in doc_id
/// order, so ids follow each cluster's first core point and the result does
/// not depend on input row order.
class DensityClusterer final : public Clusterer {
 public:
  DensityClusterer(double eps = kDefaultEps, std::size_t min_pts = kDefaultMinPts)
      : eps_(eps), min_pts_(min_pts) {}
  Clustering cluster(const Matrix& points, std::span<const std::string> doc_ids) const override;

 private:
  double eps_;
  std::size_t min_pts_;
};

/// Throws TooFewDocuments when there are fewer points than min_pts.
Clustering cluster_documents(const Matrix& points, std::span<const std::string> doc_ids,
                             double eps = kDefaultEps, std::size_t min_pts = kDefaultMinPts);

/// Class-based TF-IDF: W(t, c) = tf(t, c) * ln(1 + A / tf(t)), where each
/// cluster is its documents' tokens concatenated, tf(t) counts t across all
/// clusters and A is the mean token count per cluster.
struct ClusterTermWeights {
  double average_tokens = 0.0;                      // A
  std::map<std::string, std::size_t> total_counts;  // tf(t)
  std::vector<std::map<std::string, double>> weights;  // per cluster, present terms only

  double weight(std::size_t cluster, const std::string& term) const;
};

/// Noise is excluded. Throws InvalidArgument without clusters and
/// EmptyVocabulary when the clusters contain no tokens.
ClusterTermWeights compute_ctfidf(std::span<const Cluster> clusters,
                                  const std::map<std::string, TokenList>& tokens_by_doc);

struct TopicSummary {
  int topic_id = 0;
  std::size_t doc_count = 0;
  std::vector<std::pair<std::string, double>> top_terms;
  std::vector<std::string> member_doc_ids;
};

inline constexpr std::size_t kDefaultTopK = 10;

/// Topics renumbered by descending size (ties keep the original id order);
/// the top k terms of each by weight, ties broken lexicographically.
std::vector<TopicSummary> summarize_topics(const ClusterTermWeights& weights,
                                           std::span<const Cluster> clusters,
                                           std::size_t k = kDefaultTopK);

struct TopicParams {
  std::size_t target_dim = kDefaultTargetDim;
  double eps = kDefaultEps;
  std::size_t min_pts = kDefaultMinPts;
  std::size_t top_k = kDefaultTopK;
  std::uint64_t seed = 0;
};

struct TopicReport {
  std::string hazard;
  std::string ncf;
  std::size_t subset_size = 0;
  std::size_t noise_count = 0;
  double captured_variance_ratio = 0.0;
  std::vector<TopicSummary> topics;
  std::vector<std::string> noise_doc_ids;
};

/// Reduce, cluster and summarize the documents in `embeddings` (rows are the
/// pair subset). With no dense cluster the report carries only noise.
TopicReport run_topic_model(const std::string& hazard, const std::string& ncf,
                            const EmbeddingMatrix& embeddings,
                            const std::map<std::string, TokenList>& tokens_by_doc,
                            const TopicParams& params,
                            const DimensionReducer* reducer = nullptr,
                            const Clusterer* clusterer = nullptr);

void write_topic_report(const std::filesystem::path& path, const TopicReport& report);

}  // namespace weaklabeler
