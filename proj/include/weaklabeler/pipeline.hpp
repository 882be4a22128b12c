#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "weaklabeler/classify.hpp"
#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"
#include "weaklabeler/topics.hpp"
#include "weaklabeler/weaklabel.hpp"

namespace weaklabeler {

enum class JobKind { filter_shard, label_category, train_chain, predict_shard, topic_pair };

std::string_view to_string(JobKind kind);

/// Seed for one job, independent of when or where it runs.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view job_id);

struct JobSpec {
  std::string job_id;
  JobKind kind = JobKind::filter_shard;
  std::vector<std::string> inputs;      // files read, relative to the run directory or absolute
  std::vector<std::string> depends_on;  // job ids
  std::uint64_t seed = 0;

  std::optional<Taxonomy> taxonomy;
  std::string cat_id;
  std::string provider_id;
  std::size_t begin = 0;  // document range for shard jobs
  std::size_t end = 0;
  std::string hazard;  // topic pair
  std::string ncf;
};

struct RunConfig {
  std::filesystem::path docs;
  std::vector<std::filesystem::path> categories;  // hazard and NCF definitions, any split
  std::optional<std::filesystem::path> stopwords;
  std::filesystem::path embeddings_dir;
  std::filesystem::path out_dir = "run";
  std::vector<ProviderSpec> providers;
  std::optional<std::string> filter_provider;  // defaults to the first provider
  double filter_threshold = 0.4;
  double lf_threshold = 0.4;
  std::uint64_t seed = 0;
  std::size_t shards = 4;
  double l2 = kDefaultL2;
  LoadPolicy load_policy = LoadPolicy::skip_bad;
  std::size_t min_cell = kDefaultMinCell;
  TopicParams topics;
  /// Pairs to topic-model; empty means the largest pair in the filtered matrix.
  std::vector<std::pair<std::string, std::string>> topic_pairs;

  /// Keys mirror the long CLI flags with dashes replaced by underscores.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  /// Snapshot recorded in the manifest. Worker count is deliberately absent.
  nlohmann::json snapshot() const;
  const ProviderSpec& resolve_filter_provider() const;
};

/// Jobs in dependency order: filter shards (hazard, then NCF per shard), one
/// label job per (taxonomy, category), one chain-training job per provider,
/// prediction shards, then topic pairs.
std::vector<JobSpec> plan_jobs(const RunConfig& config, const CategorySet& categories,
                               std::size_t doc_count);

enum class JobStatus { pending, ok, failed, skipped };

std::string_view to_string(JobStatus status);

struct OutputDigest {
  std::string path;
  std::string sha256;

  bool operator==(const OutputDigest&) const = default;
};

struct JobRecord {
  JobSpec spec;
  JobStatus status = JobStatus::pending;
  std::vector<OutputDigest> outputs;
  std::string error;
};

struct RunManifest {
  nlohmann::json config = nlohmann::json::object();
  std::vector<JobRecord> jobs;
  std::vector<OutputDigest> reports;

  std::size_t failed_count() const;
  bool ok() const { return failed_count() == 0; }
  /// 0 when every job succeeded, 2 on partial failure.
  int exit_code() const { return ok() ? 0 : 2; }
  nlohmann::json to_json() const;
  /// Every recorded digest, jobs first, in manifest order.
  std::vector<OutputDigest> all_digests() const;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Runs one job and returns the files it wrote.
using JobRunner = std::function<std::vector<std::filesystem::path>(const JobSpec&)>;

/// Runs `jobs` on up to `workers` threads, starting a job once everything it
/// depends on succeeded. A throwing job is marked failed and its dependents
/// skipped; unrelated jobs still run. Output digests are recorded relative
/// to `root`. Records keep the input order.
RunManifest execute(std::span<const JobSpec> jobs, std::size_t workers, const JobRunner& runner,
                    const std::filesystem::path& root = {});

/// Re-hashes every output under `root` and compares with the manifest.
bool verify_manifest(const RunManifest& manifest, const std::filesystem::path& root);

/// Per-category label files joined on doc_id.
struct MergedLabels {
  std::vector<std::string> doc_ids;   // sorted
  std::vector<std::string> cat_ids;   // category order
  std::vector<ProbabilisticLabel> labels;  // doc-major, one slot per category

  const ProbabilisticLabel& at(std::size_t doc, std::size_t cat) const {
    return labels[doc * cat_ids.size() + cat];
  }
  std::vector<MultiLabelAssignment> assignments(Taxonomy taxonomy) const;
};

/// Files may be given in any order; each is matched to its category by the
/// cat_id it contains. Throws MissingOutput when a category in `category_order`
/// has no file and InconsistentCoverage when files disagree on documents.
MergedLabels merge_labels(std::span<const std::filesystem::path> files,
                          std::span<const std::string> category_order);

/// JSON-lines {"doc_id", "labels": [{"cat_id", "p", "hard"}...]}.
void write_merged_labels(const std::filesystem::path& path, const MergedLabels& merged);

/// Reads `<dir>/<taxonomy>/<cat_id>.labels.jsonl` for every category in order.
MergedLabels load_label_dir(const std::filesystem::path& dir, Taxonomy taxonomy,
                            std::span<const std::string> category_order);

/// Feature rows (one matrix per provider) and targets for the documents in
/// `docs` that have an assignment. With `labeled_only`, documents without any
/// label in `taxonomy` are dropped.
TrainingSet build_training_set(const DocumentCollection& docs,
                               std::span<const MultiLabelAssignment> assignments, Taxonomy taxonomy,
                               std::span<const std::string> category_order,
                               std::span<const ProviderSpec> providers, const Embedder& embedder,
                               bool labeled_only);

/// Labels one category over `corpus` with one LF per provider and writes
/// `<out_dir>/<cat_id>.labels.jsonl` and `<out_dir>/<cat_id>.params.json`.
/// Falls back to majority vote (recorded in the params file) when the vote
/// matrix is unidentifiable or too small for EM.
std::vector<std::filesystem::path> label_category(const DocumentCollection& corpus,
                                                  const CategoryDefinition& category,
                                                  std::span<const ProviderSpec> providers,
                                                  double default_threshold,
                                                  const Embedder& embedder,
                                                  const std::filesystem::path& out_dir);

/// Runs label_category for every category in `categories` on up to
/// `workers` threads, then writes `<out_dir>/labels_<taxonomy>.jsonl` (merged)
/// and `<out_dir>/manifest.json`.
RunManifest label_taxonomy(const DocumentCollection& corpus, const std::vector<CategoryDefinition>& categories,
                           Taxonomy taxonomy, std::span<const ProviderSpec> providers, double threshold,
                           std::size_t workers, std::uint64_t seed, const Embedder& embedder,
                           const std::filesystem::path& out_dir);

/// Called before each job; throwing fails that job. Used for progress output
/// and fault injection.
using JobHook = std::function<void(const JobSpec&)>;

/// The whole flow into `config.out_dir`: filter, label, train, predict,
/// report and topic-model. Writes `manifest.json` and returns it.
RunManifest run_all(const RunConfig& config, std::size_t workers, const JobHook& hook = {});

}  // namespace weaklabeler
