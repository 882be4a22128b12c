#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "weaklabeler/classify.hpp"
#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/filter.hpp"
#include "weaklabeler/pipeline.hpp"
#include "weaklabeler/topics.hpp"
#include "weaklabeler/weaklabel.hpp"

namespace fs = std::filesystem;
namespace wl = weaklabeler;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;

struct Common {
  std::string docs;
  std::vector<std::string> categories;
  std::string stopwords;
  std::string embeddings;
  std::string policy = "skip_bad";

  wl::LoadPolicy load_policy() const {
    if (policy == "skip_bad") return wl::LoadPolicy::skip_bad;
    if (policy == "fail_fast") return wl::LoadPolicy::fail_fast;
    throw wl::Error(wl::ErrorCode::InvalidArgument, "--policy must be skip_bad or fail_fast");
  }
  wl::Embedder embedder() const {
    return wl::Embedder(stopwords.empty() ? wl::default_stopwords() : wl::load_stopwords(stopwords), embeddings);
  }
  wl::DocumentCollection documents() const {
    auto docs_ = wl::load_documents(docs, load_policy());
    if (docs_.skipped_count > 0) std::cerr << "skipped " << docs_.skipped_count << " malformed line(s)\n";
    return docs_;
  }
  wl::CategorySet category_set() const {
    std::vector<wl::CategoryDefinition> all;
    for (const auto& path : categories) {
      auto set = wl::load_categories(path);
      all.insert(all.end(), set.entries().begin(), set.entries().end());
    }
    return wl::CategorySet(std::move(all));
  }
};

// Checked after the config file is applied, so CLI11's own required() is not used.
std::vector<CLI::Option*> g_required;

CLI::Option* required(CLI::Option* opt) {
  g_required.push_back(opt);
  return opt->description(opt->get_description() + " (required)");
}

void add_docs(CLI::App* cmd, Common& c) { required(cmd->add_option("--docs", c.docs, "Documents (JSON lines)")); }
void add_categories(CLI::App* cmd, Common& c) {
  required(cmd->add_option("--categories", c.categories, "Category definition file(s)"))->delimiter(',');
}
void add_text_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--stopwords", c.stopwords, "Stopword list, one per line");
  cmd->add_option("--embeddings", c.embeddings, "Directory of precomputed embeddings");
  cmd->add_option("--policy", c.policy, "Malformed input lines: skip_bad or fail_fast")
      ->check(CLI::IsMember({"skip_bad", "fail_fast"}));
}

std::vector<std::string> config_keys_for_paths() {
  return {"docs", "categories", "stopwords", "embeddings", "out", "labels", "targets", "model", "predictions"};
}

std::string config_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

// Fills options the user did not pass on the command line from the config
// object. Relative paths resolve against the config file's directory.
void apply_config(CLI::App* cmd, const json& config, const fs::path& base) {
  const auto path_keys = config_keys_for_paths();
  for (auto* opt : cmd->get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    auto key = opt->get_lnames().front();
    std::replace(key.begin(), key.end(), '-', '_');
    if (!config.contains(key)) continue;
    const bool is_path = std::find(path_keys.begin(), path_keys.end(), key) != path_keys.end();
    auto add = [&](const json& v) {
      auto text = config_text(v);
      if (is_path && !text.empty() && fs::path(text).is_relative()) text = (base / text).string();
      opt->add_result(text);
    };
    const auto& value = config.at(key);
    if (value.is_array()) {
      if (opt->get_expected_max() > 1) {
        for (const auto& v : value) add(v);
      } else {
        // Comma lists such as providers.
        std::string joined;
        for (const auto& v : value) joined += (joined.empty() ? "" : ",") + config_text(v);
        opt->add_result(joined);
      }
    } else {
      add(value);
    }
    opt->run_callback();
  }
}

void print_manifest_summary(const wl::RunManifest& manifest) {
  for (const auto& job : manifest.jobs) {
    if (job.status != wl::JobStatus::ok) {
      std::cerr << job.spec.job_id << ": " << wl::to_string(job.status) << (job.error.empty() ? "" : ": ")
                << job.error << "\n";
    }
  }
  std::cerr << manifest.jobs.size() - manifest.failed_count() << "/" << manifest.jobs.size() << " jobs without failure\n";
}

std::vector<wl::MultiLabelAssignment> targets_from(const std::string& labels_dir, const std::string& targets_file,
                                                   wl::Taxonomy taxonomy, const std::vector<std::string>& order) {
  if (!targets_file.empty()) return wl::read_predictions(targets_file);
  if (labels_dir.empty()) throw wl::Error(wl::ErrorCode::InvalidArgument, "one of --labels or --targets is required");
  return wl::load_label_dir(labels_dir, taxonomy, order).assignments(taxonomy);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak supervision labeling of research abstracts against hazard and NCF taxonomies"};
  app.require_subcommand(1);
  app.fallthrough();

  std::size_t workers = 1;
  std::uint64_t seed = 0;
  std::string config_file;
  app.add_option("--workers", workers, "Parallel workers")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Global seed");
  app.add_option("--config", config_file, "JSON config; command-line flags take precedence")
      ->check(CLI::ExistingFile);

  Common common;

  // filter
  auto* filter = app.add_subcommand("filter", "Flag documents whose best category similarity exceeds a threshold");
  std::string filter_taxonomy = "hazard", filter_provider = "hashed:0", filter_out = "filter_out";
  double filter_threshold = 0.4;
  add_docs(filter, common);
  add_categories(filter, common);
  add_text_options(filter, common);
  filter->add_option("--taxonomy", filter_taxonomy)->check(CLI::IsMember({"hazard", "ncf"}));
  filter->add_option("--threshold", filter_threshold);
  filter->add_option("--provider", filter_provider, "hashed:SEED[:DIM] or file:NAME[:DIM]");
  filter->add_option("--out", filter_out, "Output directory");

  // label
  auto* label = app.add_subcommand("label", "Fit one label model per category and write probabilistic labels");
  std::string label_taxonomy = "hazard", label_providers, label_out = "labels";
  double label_threshold = 0.4;
  add_docs(label, common);
  add_categories(label, common);
  add_text_options(label, common);
  label->add_option("--taxonomy", label_taxonomy)->check(CLI::IsMember({"hazard", "ncf"}));
  required(label->add_option("--providers", label_providers, "Comma-separated provider list"));
  label->add_option("--threshold", label_threshold);
  label->add_option("--out", label_out, "Output directory");

  // train
  auto* train = app.add_subcommand("train", "Train one classifier chain per provider");
  std::string train_labels, train_targets, train_providers, train_taxonomy = "hazard", train_out = "model.json";
  double train_l2 = wl::kDefaultL2;
  add_docs(train, common);
  add_categories(train, common);
  add_text_options(train, common);
  train->add_option("--labels", train_labels, "Directory written by `label`");
  train->add_option("--targets", train_targets, "Assignments (JSON lines) instead of --labels");
  required(train->add_option("--providers", train_providers));
  train->add_option("--taxonomy", train_taxonomy)->check(CLI::IsMember({"hazard", "ncf"}));
  train->add_option("--l2", train_l2)->check(CLI::NonNegativeNumber);
  train->add_option("--out", train_out);

  // predict
  auto* predict = app.add_subcommand("predict", "Predict label sets with a trained ensemble");
  std::string predict_model, predict_out = "predictions.jsonl";
  add_docs(predict, common);
  add_text_options(predict, common);
  required(predict->add_option("--model", predict_model));
  predict->add_option("--out", predict_out, "Output file");

  // crossval
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation of the chain ensemble");
  std::string cv_labels, cv_targets, cv_providers, cv_taxonomy = "hazard", cv_out;
  std::size_t cv_k = 10;
  double cv_l2 = wl::kDefaultL2;
  add_docs(crossval, common);
  add_categories(crossval, common);
  add_text_options(crossval, common);
  crossval->add_option("--labels", cv_labels, "Directory written by `label`");
  crossval->add_option("--targets", cv_targets, "Assignments (JSON lines) instead of --labels");
  required(crossval->add_option("--providers", cv_providers));
  crossval->add_option("--taxonomy", cv_taxonomy)->check(CLI::IsMember({"hazard", "ncf"}));
  crossval->add_option("--k", cv_k)->check(CLI::Range(2, 1000000));
  crossval->add_option("--l2", cv_l2)->check(CLI::NonNegativeNumber);
  crossval->add_option("--out", cv_out, "Metrics file; stdout when omitted");

  // pairs
  auto* pairs = app.add_subcommand("pairs", "Hazard x NCF co-occurrence counts and class histograms");
  std::string pairs_predictions, pairs_out = "pairs_out";
  std::size_t pairs_min_cell = wl::kDefaultMinCell;
  add_categories(pairs, common);
  required(pairs->add_option("--predictions", pairs_predictions));
  pairs->add_option("--min-cell", pairs_min_cell);
  pairs->add_option("--out", pairs_out, "Output directory");

  // topics
  auto* topics = app.add_subcommand("topics", "Topic-model the documents carrying one hazard and one NCF");
  std::string topics_pair, topics_predictions, topics_provider = "hashed:0", topics_out = "topics.json";
  wl::TopicParams topic_params;
  add_docs(topics, common);
  add_categories(topics, common);
  add_text_options(topics, common);
  required(topics->add_option("--pair", topics_pair, "HAZARD,NCF"));
  required(topics->add_option("--predictions", topics_predictions));
  topics->add_option("--provider", topics_provider);
  topics->add_option("--target-dim", topic_params.target_dim)->check(CLI::PositiveNumber);
  topics->add_option("--eps", topic_params.eps)->check(CLI::PositiveNumber);
  topics->add_option("--min-pts", topic_params.min_pts)->check(CLI::PositiveNumber);
  topics->add_option("--top-k", topic_params.top_k);
  topics->add_option("--out", topics_out);

  // run-all
  auto* run_all = app.add_subcommand("run-all", "Filter, label, train, predict and topic-model in one run");
  std::string ra_providers, ra_filter_provider, ra_out = "run";
  std::vector<std::string> ra_pairs;
  wl::RunConfig ra;
  add_docs(run_all, common);
  add_categories(run_all, common);
  add_text_options(run_all, common);
  required(run_all->add_option("--providers", ra_providers));
  run_all->add_option("--filter-provider", ra_filter_provider, "Provider id for filtering and topics");
  run_all->add_option("--filter-threshold", ra.filter_threshold);
  run_all->add_option("--threshold", ra.lf_threshold, "Labeling-function threshold");
  run_all->add_option("--shards", ra.shards)->check(CLI::PositiveNumber);
  run_all->add_option("--l2", ra.l2)->check(CLI::NonNegativeNumber);
  run_all->add_option("--min-cell", ra.min_cell);
  run_all->add_option("--pairs", ra_pairs, "HAZARD,NCF pairs to topic-model");
  run_all->add_option("--target-dim", ra.topics.target_dim)->check(CLI::PositiveNumber);
  run_all->add_option("--eps", ra.topics.eps)->check(CLI::PositiveNumber);
  run_all->add_option("--min-pts", ra.topics.min_pts)->check(CLI::PositiveNumber);
  run_all->add_option("--top-k", ra.topics.top_k);
  run_all->add_option("--out", ra_out, "Run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      json config;
      try {
        config = json::parse(in);
      } catch (const json::exception& e) {
        throw wl::Error(wl::ErrorCode::Parse, "config: " + std::string(e.what()));
      }
      if (!config.is_object()) throw wl::Error(wl::ErrorCode::Parse, "config must be a JSON object");
      const auto base = fs::path(config_file).parent_path();
      apply_config(&app, config, base);
      for (auto* sub : app.get_subcommands()) apply_config(sub, config, base);
    }
    for (auto* sub : app.get_subcommands()) {
      for (auto* opt : g_required) {
        if (sub->get_option_no_throw(opt->get_name()) == opt && opt->count() == 0) {
          std::cerr << sub->get_name() << ": " << opt->get_name() << " is required\n";
          return kUsage;
        }
      }
    }

    if (*filter) {
      const auto docs = common.documents();
      const auto cats = common.category_set();
      const auto taxonomy = wl::parse_taxonomy(filter_taxonomy);
      const auto provider = wl::ProviderSpec::parse(filter_provider);
      const auto result = wl::filter_corpus(docs, cats.of(taxonomy), provider, filter_threshold, common.embedder());
      const fs::path out = filter_out;
      wl::write_decisions(out / "decisions.jsonl", result.decisions);
      wl::write_documents(out / "kept.jsonl", result.kept);
      std::cerr << "kept " << result.kept.size() << " of " << docs.size() << " documents\n";
      return kOk;
    }

    if (*label) {
      const auto docs = common.documents();
      const auto cats = common.category_set();
      const auto providers = wl::parse_provider_list(label_providers);
      const auto taxonomy = wl::parse_taxonomy(label_taxonomy);
      const auto manifest = wl::label_taxonomy(docs, cats.of(taxonomy), taxonomy, providers, label_threshold, workers,
                                               seed, common.embedder(), label_out);
      print_manifest_summary(manifest);
      return manifest.exit_code();
    }

    if (*train) {
      const auto docs = common.documents();
      const auto cats = common.category_set();
      const auto taxonomy = wl::parse_taxonomy(train_taxonomy);
      const auto order = cats.ids(taxonomy);
      const auto providers = wl::parse_provider_list(train_providers);
      const auto assignments = targets_from(train_labels, train_targets, taxonomy, order);
      const auto set =
          wl::build_training_set(docs, assignments, taxonomy, order, providers, common.embedder(), true);
      if (set.doc_ids.empty()) throw wl::Error(wl::ErrorCode::InvalidArgument, "no labeled documents to train on");
      wl::TrainOptions options;
      options.l2 = train_l2;
      const auto model = wl::train_ensemble(set, taxonomy, options);
      wl::write_model(train_out, model);
      std::cerr << "trained " << model.chains.size() << " chain(s) on " << set.doc_ids.size() << " documents\n";
      return kOk;
    }

    if (*predict) {
      const auto docs = common.documents();
      const auto model = wl::read_model(predict_model);
      const auto embedder = common.embedder();
      std::map<std::string, wl::Matrix> features;
      for (const auto& chain : model.chains) {
        if (!features.count(chain.provider.provider_id)) {
          features.emplace(chain.provider.provider_id, wl::Matrix::from(embedder.embed_documents(chain.provider, docs)));
        }
      }
      const auto labels = wl::ensemble_predict(model, features);
      std::vector<wl::MultiLabelAssignment> rows;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        wl::MultiLabelAssignment a;
        a.doc_id = docs[i].doc_id;
        for (std::size_t k = 0; k < labels.cols; ++k) {
          if (labels(i, k) == 1) a.labels(model.taxonomy).push_back(model.category_order()[k]);
        }
        rows.push_back(std::move(a));
      }
      std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
      wl::write_predictions(predict_out, rows);
      return kOk;
    }

    if (*crossval) {
      const auto docs = common.documents();
      const auto cats = common.category_set();
      const auto taxonomy = wl::parse_taxonomy(cv_taxonomy);
      const auto order = cats.ids(taxonomy);
      const auto providers = wl::parse_provider_list(cv_providers);
      const auto assignments = targets_from(cv_labels, cv_targets, taxonomy, order);
      // Explicit targets keep label-free rows; weak labels do not.
      const auto set = wl::build_training_set(docs, assignments, taxonomy, order, providers, common.embedder(),
                                              cv_targets.empty());
      wl::TrainOptions options;
      options.l2 = cv_l2;
      const auto m = wl::cross_validate(set, cv_k, seed, options);
      json f1 = json::object();
      for (std::size_t k = 0; k < order.size(); ++k) f1[order[k]] = m.per_label_f1[k];
      const json report = {{"folds", m.folds},
                           {"documents", set.doc_ids.size()},
                           {"label_wise_accuracy", m.label_wise_accuracy},
                           {"subset_accuracy", m.subset_accuracy},
                           {"per_label_f1", f1}};
      if (cv_out.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::ofstream(cv_out) << report.dump(2) << "\n";
      }
      return kOk;
    }

    if (*pairs) {
      const auto cats = common.category_set();
      const auto preds = wl::read_predictions(pairs_predictions);
      const auto hazards = cats.ids(wl::Taxonomy::hazard);
      const auto ncfs = cats.ids(wl::Taxonomy::ncf);
      const auto counts = wl::pair_count_matrix(preds, hazards, ncfs, pairs_min_cell);
      const fs::path out = pairs_out;
      wl::write_pair_csv(out / "pairs.csv", counts.full);
      wl::write_pair_csv(out / "pairs_filtered.csv", counts.filtered);
      wl::write_class_histogram(out / "histogram_hazard.csv", wl::per_class_counts(preds, wl::Taxonomy::hazard, hazards));
      wl::write_class_histogram(out / "histogram_ncf.csv", wl::per_class_counts(preds, wl::Taxonomy::ncf, ncfs));
      return kOk;
    }

    if (*topics) {
      const auto comma = topics_pair.find(',');
      if (comma == std::string::npos) throw wl::Error(wl::ErrorCode::InvalidArgument, "--pair must be HAZARD,NCF");
      const auto hazard = topics_pair.substr(0, comma);
      const auto ncf = topics_pair.substr(comma + 1);
      const auto docs = common.documents();
      const auto cats = common.category_set();
      const auto preds = wl::read_predictions(topics_predictions);
      const auto ids = wl::select_pair_subset(preds, hazard, ncf, cats.ids(wl::Taxonomy::hazard),
                                              cats.ids(wl::Taxonomy::ncf));
      const auto subset = docs.subset({ids.begin(), ids.end()});
      if (subset.size() != ids.size()) {
        throw wl::Error(wl::ErrorCode::InvalidArgument, "predictions name documents missing from --docs");
      }
      const auto embedder = common.embedder();
      std::map<std::string, wl::TokenList> tokens;
      for (const auto& d : subset) tokens.emplace(d.doc_id, wl::tokenize(d.abstract, embedder.stopwords()));
      topic_params.seed = seed;
      wl::TopicReport report;
      report.hazard = hazard;
      report.ncf = ncf;
      if (!subset.empty()) {
        const auto embeddings =
            embedder.embed_documents(wl::ProviderSpec::parse(topics_provider), subset).select(ids);
        report = wl::run_topic_model(hazard, ncf, embeddings, tokens, topic_params);
      }
      wl::write_topic_report(topics_out, report);
      return kOk;
    }

    if (*run_all) {
      ra.docs = common.docs;
      for (const auto& c : common.categories) ra.categories.push_back(c);
      if (!common.stopwords.empty()) ra.stopwords = common.stopwords;
      ra.embeddings_dir = common.embeddings;
      ra.out_dir = ra_out;
      ra.providers = wl::parse_provider_list(ra_providers);
      if (!ra_filter_provider.empty()) ra.filter_provider = ra_filter_provider;
      ra.seed = seed;
      ra.load_policy = common.load_policy();
      for (const auto& p : ra_pairs) {
        const auto comma = p.find(',');
        if (comma == std::string::npos) throw wl::Error(wl::ErrorCode::InvalidArgument, "--pairs entries must be HAZARD,NCF");
        ra.topic_pairs.emplace_back(p.substr(0, comma), p.substr(comma + 1));
      }
      const auto start = std::chrono::steady_clock::now();
      const auto manifest = wl::run_all(ra, workers, [](const wl::JobSpec& job) { std::cerr << job.job_id << "\n"; });
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      print_manifest_summary(manifest);
      std::cerr << "finished in " << elapsed.count() << " s\n";
      return manifest.exit_code();
    }
  } catch (const wl::Error& e) {
    std::cerr << "error (" << wl::to_string(e.code()) << "): " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
