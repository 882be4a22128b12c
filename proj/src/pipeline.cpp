#include "weaklabeler/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "jsonio.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/filter.hpp"
#include "weaklabeler/hashing.hpp"

namespace weaklabeler {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::filter_shard: return "filter_shard";
    case JobKind::label_category: return "label_category";
    case JobKind::train_chain: return "train_chain";
    case JobKind::predict_shard: return "predict_shard";
    case JobKind::topic_pair: return "topic_pair";
  }
  return "unknown";
}

std::string_view to_string(JobStatus status) {
  switch (status) {
    case JobStatus::pending: return "pending";
    case JobStatus::ok: return "ok";
    case JobStatus::failed: return "failed";
    case JobStatus::skipped: return "skipped";
  }
  return "unknown";
}

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view job_id) {
  return stable_hash(global_seed, job_id);
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::pair<std::string, std::string> parse_pair(const std::string& text) {
  auto comma = text.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == text.size()) {
    throw Error(ErrorCode::InvalidArgument, "pair '" + text + "' is not HAZARD,NCF");
  }
  return {text.substr(0, comma), text.substr(comma + 1)};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    if (j.contains("docs")) c.docs = resolve(base_dir, j.at("docs").get<std::string>());
    if (j.contains("categories")) {
      const auto& cats = j.at("categories");
      if (cats.is_string()) {
        c.categories.push_back(resolve(base_dir, cats.get<std::string>()));
      } else {
        for (const auto& p : cats) c.categories.push_back(resolve(base_dir, p.get<std::string>()));
      }
    }
    if (j.contains("stopwords") && !j.at("stopwords").is_null()) {
      c.stopwords = resolve(base_dir, j.at("stopwords").get<std::string>());
    }
    if (j.contains("embeddings")) c.embeddings_dir = resolve(base_dir, j.at("embeddings").get<std::string>());
    if (j.contains("out")) c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
    if (j.contains("providers")) {
      const auto& p = j.at("providers");
      if (p.is_string()) {
        c.providers = parse_provider_list(p.get<std::string>());
      } else {
        std::string joined;
        for (const auto& t : p) joined += (joined.empty() ? "" : ",") + t.get<std::string>();
        c.providers = parse_provider_list(joined);
      }
    }
    if (j.contains("filter_provider")) c.filter_provider = j.at("filter_provider").get<std::string>();
    c.filter_threshold = j.value("filter_threshold", c.filter_threshold);
    c.lf_threshold = j.value("threshold", c.lf_threshold);
    c.seed = j.value("seed", c.seed);
    c.shards = j.value("shards", c.shards);
    c.l2 = j.value("l2", c.l2);
    if (j.contains("policy")) {
      const auto policy = j.at("policy").get<std::string>();
      if (policy == "skip_bad") {
        c.load_policy = LoadPolicy::skip_bad;
      } else if (policy == "fail_fast") {
        c.load_policy = LoadPolicy::fail_fast;
      } else {
        throw Error(ErrorCode::InvalidArgument, "policy must be skip_bad or fail_fast");
      }
    }
    c.min_cell = j.value("min_cell", c.min_cell);
    c.topics.target_dim = j.value("target_dim", c.topics.target_dim);
    c.topics.eps = j.value("eps", c.topics.eps);
    c.topics.min_pts = j.value("min_pts", c.topics.min_pts);
    c.topics.top_k = j.value("top_k", c.topics.top_k);
    if (j.contains("pairs")) {
      for (const auto& p : j.at("pairs")) c.topic_pairs.push_back(parse_pair(p.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("config: ") + e.what());
  }
  return c;
}

json RunConfig::snapshot() const {
  json providers_json = json::array();
  for (const auto& p : providers) providers_json.push_back(p.token());
  json cats = json::array();
  for (const auto& p : categories) cats.push_back(p.string());
  json pairs = json::array();
  for (const auto& [h, n] : topic_pairs) pairs.push_back(h + "," + n);
  return {{"docs", docs.string()},
          {"categories", cats},
          {"stopwords", stopwords ? json(stopwords->string()) : json(nullptr)},
          {"embeddings", embeddings_dir.string()},
          {"providers", providers_json},
          {"filter_provider", resolve_filter_provider().provider_id},
          {"filter_threshold", filter_threshold},
          {"threshold", lf_threshold},
          {"seed", seed},
          {"shards", shards},
          {"l2", l2},
          {"policy", load_policy == LoadPolicy::skip_bad ? "skip_bad" : "fail_fast"},
          {"min_cell", min_cell},
          {"target_dim", topics.target_dim},
          {"eps", topics.eps},
          {"min_pts", topics.min_pts},
          {"top_k", topics.top_k},
          {"pairs", pairs}};
}

const ProviderSpec& RunConfig::resolve_filter_provider() const {
  if (providers.empty()) throw Error(ErrorCode::InvalidArgument, "no providers configured");
  if (!filter_provider) return providers.front();
  for (const auto& p : providers) {
    if (p.provider_id == *filter_provider) return p;
  }
  throw Error(ErrorCode::InvalidArgument, "filter provider '" + *filter_provider + "' is not among the providers");
}

// ---------------------------------------------------------------------------
// Planning

namespace {

std::string shard_name(std::size_t k) {
  std::ostringstream s;
  s << std::setw(3) << std::setfill('0') << k;
  return s.str();
}

// Category and provider ids become file names.
std::string file_safe(const std::string& id) {
  std::string out = id;
  for (auto& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out;
}

std::string filter_output(Taxonomy t, std::size_t k) {
  return "filter/" + std::string(to_string(t)) + "-" + shard_name(k) + ".jsonl";
}
std::string labels_output(Taxonomy t, const std::string& cat) {
  return "labels/" + std::string(to_string(t)) + "/" + file_safe(cat) + ".labels.jsonl";
}
std::string model_output(const std::string& provider, Taxonomy t) {
  return "models/" + file_safe(provider) + "." + std::string(to_string(t)) + ".json";
}
std::string predict_output(std::size_t k) { return "predictions/shard-" + shard_name(k) + ".jsonl"; }
std::string topic_output(const std::string& h, const std::string& n) {
  return "topics/" + file_safe(h) + "__" + file_safe(n) + ".json";
}
const std::string kAutoTopic = "topics/auto.json";

constexpr Taxonomy kTaxonomies[] = {Taxonomy::hazard, Taxonomy::ncf};

}  // namespace

std::vector<JobSpec> plan_jobs(const RunConfig& config, const CategorySet& categories, std::size_t doc_count) {
  if (config.providers.empty()) throw Error(ErrorCode::InvalidArgument, "no providers configured");
  if (config.shards == 0) throw Error(ErrorCode::InvalidArgument, "shards must be positive");
  if (!std::isfinite(config.filter_threshold) || !std::isfinite(config.lf_threshold)) {
    throw Error(ErrorCode::InvalidArgument, "thresholds must be finite");
  }
  const auto& filter_provider = config.resolve_filter_provider();
  (void)filter_provider;
  for (auto t : kTaxonomies) {
    if (categories.ids(t).empty()) {
      throw Error(ErrorCode::InvalidArgument, "no " + std::string(to_string(t)) + " categories");
    }
  }
  for (const auto& [h, n] : config.topic_pairs) {
    if (!categories.find(Taxonomy::hazard, h)) throw Error(ErrorCode::UnknownCategory, "unknown hazard '" + h + "'");
    if (!categories.find(Taxonomy::ncf, n)) throw Error(ErrorCode::UnknownCategory, "unknown NCF '" + n + "'");
  }

  std::vector<JobSpec> jobs;
  auto add = [&](JobSpec job) {
    job.seed = derive_seed(config.seed, job.job_id);
    jobs.push_back(std::move(job));
  };

  const std::size_t shards = std::max<std::size_t>(1, std::min(config.shards, doc_count));
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  {
    std::size_t begin = 0;
    for (auto size : fold_sizes(doc_count, shards)) {
      ranges.emplace_back(begin, begin + size);
      begin += size;
    }
  }

  std::vector<std::string> filter_ids, ncf_filter_outputs;
  for (std::size_t k = 0; k < shards; ++k) {
    JobSpec hz;
    hz.job_id = "filter:hazard:" + shard_name(k);
    hz.kind = JobKind::filter_shard;
    hz.taxonomy = Taxonomy::hazard;
    std::tie(hz.begin, hz.end) = ranges[k];
    hz.inputs = {config.docs.string()};
    for (const auto& c : config.categories) hz.inputs.push_back(c.string());

    JobSpec nc = hz;
    nc.job_id = "filter:ncf:" + shard_name(k);
    nc.taxonomy = Taxonomy::ncf;
    nc.inputs.push_back(filter_output(Taxonomy::hazard, k));
    nc.depends_on = {hz.job_id};

    filter_ids.push_back(hz.job_id);
    filter_ids.push_back(nc.job_id);
    ncf_filter_outputs.push_back(filter_output(Taxonomy::ncf, k));
    add(std::move(hz));
    add(std::move(nc));
  }

  std::vector<std::string> label_ids, label_outputs;
  for (auto t : kTaxonomies) {
    for (const auto& cat : categories.ids(t)) {
      JobSpec job;
      job.job_id = "label:" + std::string(to_string(t)) + ":" + cat;
      job.kind = JobKind::label_category;
      job.taxonomy = t;
      job.cat_id = cat;
      job.inputs = ncf_filter_outputs;
      job.depends_on = filter_ids;
      label_ids.push_back(job.job_id);
      label_outputs.push_back(labels_output(t, cat));
      add(std::move(job));
    }
  }

  std::vector<std::string> train_ids, model_outputs;
  for (const auto& p : config.providers) {
    JobSpec job;
    job.job_id = "train:" + p.provider_id;
    job.kind = JobKind::train_chain;
    job.provider_id = p.provider_id;
    job.inputs = label_outputs;
    job.depends_on = label_ids;
    train_ids.push_back(job.job_id);
    for (auto t : kTaxonomies) model_outputs.push_back(model_output(p.provider_id, t));
    add(std::move(job));
  }

  std::vector<std::string> predict_ids, predict_outputs;
  for (std::size_t k = 0; k < shards; ++k) {
    JobSpec job;
    job.job_id = "predict:" + shard_name(k);
    job.kind = JobKind::predict_shard;
    std::tie(job.begin, job.end) = ranges[k];
    job.inputs = model_outputs;
    job.inputs.insert(job.inputs.end(), label_outputs.begin(), label_outputs.end());
    job.depends_on = train_ids;
    predict_ids.push_back(job.job_id);
    predict_outputs.push_back(predict_output(k));
    add(std::move(job));
  }

  auto topic_job = [&](const std::string& h, const std::string& n) {
    JobSpec job;
    job.job_id = h.empty() ? "topics:auto" : "topics:" + h + "," + n;
    job.kind = JobKind::topic_pair;
    job.hazard = h;
    job.ncf = n;
    job.inputs = predict_outputs;
    job.depends_on = predict_ids;
    add(std::move(job));
  };
  if (config.topic_pairs.empty()) {
    topic_job("", "");
  } else {
    for (const auto& [h, n] : config.topic_pairs) topic_job(h, n);
  }
  return jobs;
}

// ---------------------------------------------------------------------------
// Execution

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::Io, "SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 0xF];
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(detail::read_file(path)); }

std::size_t RunManifest::failed_count() const {
  return static_cast<std::size_t>(
      std::count_if(jobs.begin(), jobs.end(), [](const JobRecord& r) { return r.status == JobStatus::failed; }));
}

std::vector<OutputDigest> RunManifest::all_digests() const {
  std::vector<OutputDigest> out;
  for (const auto& j : jobs) out.insert(out.end(), j.outputs.begin(), j.outputs.end());
  out.insert(out.end(), reports.begin(), reports.end());
  return out;
}

namespace {

json digests_json(const std::vector<OutputDigest>& digests) {
  json out = json::array();
  for (const auto& d : digests) out.push_back({{"path", d.path}, {"sha256", d.sha256}});
  return out;
}

std::string relative_to(const fs::path& p, const fs::path& root) {
  if (root.empty()) return p.generic_string();
  return p.lexically_proximate(root).generic_string();
}

}  // namespace

json RunManifest::to_json() const {
  json jobs_json = json::array();
  for (const auto& r : jobs) {
    json j = {{"job_id", r.spec.job_id},
              {"kind", to_string(r.spec.kind)},
              {"status", to_string(r.status)},
              {"seed", r.spec.seed},
              {"depends_on", r.spec.depends_on},
              {"outputs", digests_json(r.outputs)}};
    if (!r.error.empty()) j["error"] = r.error;
    jobs_json.push_back(std::move(j));
  }
  return {{"config", config}, {"jobs", std::move(jobs_json)}, {"reports", digests_json(reports)}};
}

RunManifest execute(std::span<const JobSpec> jobs, std::size_t workers, const JobRunner& runner, const fs::path& root) {
  if (workers == 0) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");

  const std::size_t n = jobs.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    if (!index.emplace(jobs[i].job_id, i).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate job id '" + jobs[i].job_id + "'");
    }
  }
  std::vector<std::vector<std::size_t>> dependents(n);
  std::vector<std::size_t> waiting(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> deps;
    for (const auto& d : jobs[i].depends_on) {
      auto it = index.find(d);
      if (it == index.end()) {
        throw Error(ErrorCode::InvalidArgument, "job '" + jobs[i].job_id + "' depends on unknown '" + d + "'");
      }
      deps.insert(it->second);
    }
    for (auto d : deps) dependents[d].push_back(i);
    waiting[i] = deps.size();
  }
  {
    // Kahn's algorithm on a copy rejects cycles up front.
    auto pending = waiting;
    std::deque<std::size_t> q;
    for (std::size_t i = 0; i < n; ++i) {
      if (pending[i] == 0) q.push_back(i);
    }
    std::size_t seen = 0;
    while (!q.empty()) {
      auto i = q.front();
      q.pop_front();
      ++seen;
      for (auto d : dependents[i]) {
        if (--pending[d] == 0) q.push_back(d);
      }
    }
    if (seen != n) throw Error(ErrorCode::InvalidArgument, "job dependencies contain a cycle");
  }

  RunManifest manifest;
  manifest.jobs.resize(n);
  for (std::size_t i = 0; i < n; ++i) manifest.jobs[i].spec = jobs[i];

  std::mutex mu;
  std::condition_variable cv;
  std::set<std::size_t> ready;  // lowest index first
  std::size_t finished = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (waiting[i] == 0) ready.insert(i);
  }

  // Caller holds the lock.
  auto skip_dependents = [&](std::size_t failed) {
    std::vector<std::size_t> stack = dependents[failed];
    while (!stack.empty()) {
      auto i = stack.back();
      stack.pop_back();
      auto& rec = manifest.jobs[i];
      if (rec.status != JobStatus::pending) continue;
      rec.status = JobStatus::skipped;
      rec.error = "dependency '" + jobs[failed].job_id + "' did not complete";
      ++finished;
      stack.insert(stack.end(), dependents[i].begin(), dependents[i].end());
    }
  };

  auto worker = [&] {
    std::unique_lock lock(mu);
    while (true) {
      cv.wait(lock, [&] { return !ready.empty() || finished == n; });
      if (ready.empty()) return;
      const auto i = *ready.begin();
      ready.erase(ready.begin());
      lock.unlock();

      JobStatus status = JobStatus::ok;
      std::vector<OutputDigest> outputs;
      std::string error;
      try {
        for (const auto& path : runner(jobs[i])) outputs.push_back({relative_to(path, root), sha256_file(path)});
        std::sort(outputs.begin(), outputs.end(),
                  [](const OutputDigest& a, const OutputDigest& b) { return a.path < b.path; });
      } catch (const std::exception& e) {
        status = JobStatus::failed;
        error = e.what();
        outputs.clear();
      }

      lock.lock();
      auto& rec = manifest.jobs[i];
      rec.status = status;
      rec.outputs = std::move(outputs);
      rec.error = std::move(error);
      ++finished;
      if (status == JobStatus::ok) {
        for (auto d : dependents[i]) {
          if (--waiting[d] == 0 && manifest.jobs[d].status == JobStatus::pending) ready.insert(d);
        }
      } else {
        skip_dependents(i);
      }
      cv.notify_all();
    }
  };

  const std::size_t threads = std::min(workers, std::max<std::size_t>(n, 1));
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();  // joins
  return manifest;
}

bool verify_manifest(const RunManifest& manifest, const fs::path& root) {
  for (const auto& d : manifest.all_digests()) {
    const auto path = root / d.path;
    if (!fs::exists(path) || sha256_file(path) != d.sha256) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Label merging

std::vector<MultiLabelAssignment> MergedLabels::assignments(Taxonomy taxonomy) const {
  std::vector<MultiLabelAssignment> out;
  out.reserve(doc_ids.size());
  for (std::size_t i = 0; i < doc_ids.size(); ++i) {
    MultiLabelAssignment a;
    a.doc_id = doc_ids[i];
    for (std::size_t k = 0; k < cat_ids.size(); ++k) {
      if (at(i, k).hard == 1) a.labels(taxonomy).push_back(cat_ids[k]);
    }
    out.push_back(std::move(a));
  }
  return out;
}

MergedLabels merge_labels(std::span<const fs::path> files, std::span<const std::string> category_order) {
  std::map<std::string, std::vector<ProbabilisticLabel>> by_cat;
  for (const auto& f : files) {
    auto labels = read_labels(f);
    std::string cat;
    if (!labels.empty()) {
      cat = labels.front().cat_id;
    } else {
      // An empty corpus leaves an empty file; fall back to its name.
      cat = f.filename().string();
      if (auto pos = cat.find(".labels.jsonl"); pos != std::string::npos) cat.resize(pos);
    }
    for (const auto& l : labels) {
      if (l.cat_id != cat) throw Error(ErrorCode::Parse, f.string() + " mixes categories");
    }
    if (!by_cat.emplace(cat, std::move(labels)).second) {
      throw Error(ErrorCode::InvalidArgument, "two label files for category '" + cat + "'");
    }
  }

  MergedLabels merged;
  merged.cat_ids.assign(category_order.begin(), category_order.end());
  std::vector<std::map<std::string, ProbabilisticLabel>> columns;
  std::set<std::string> reference;
  for (std::size_t k = 0; k < category_order.size(); ++k) {
    auto it = by_cat.find(category_order[k]);
    if (it == by_cat.end()) throw Error(ErrorCode::MissingOutput, "no label file for category '" + category_order[k] + "'");
    std::map<std::string, ProbabilisticLabel> col;
    std::set<std::string> ids;
    for (auto& l : it->second) {
      ids.insert(l.doc_id);
      if (!col.emplace(l.doc_id, l).second) {
        throw Error(ErrorCode::InconsistentCoverage, "document '" + l.doc_id + "' repeated for '" + category_order[k] + "'");
      }
    }
    if (k == 0) {
      reference = ids;
    } else if (ids != reference) {
      throw Error(ErrorCode::InconsistentCoverage, "label files cover different documents");
    }
    columns.push_back(std::move(col));
  }
  merged.doc_ids.assign(reference.begin(), reference.end());
  merged.labels.reserve(merged.doc_ids.size() * columns.size());
  for (const auto& id : merged.doc_ids) {
    for (const auto& col : columns) merged.labels.push_back(col.at(id));
  }
  return merged;
}

void write_merged_labels(const fs::path& path, const MergedLabels& merged) {
  std::vector<json> rows;
  rows.reserve(merged.doc_ids.size());
  for (std::size_t i = 0; i < merged.doc_ids.size(); ++i) {
    json labels = json::array();
    for (std::size_t k = 0; k < merged.cat_ids.size(); ++k) {
      const auto& l = merged.at(i, k);
      labels.push_back({{"cat_id", l.cat_id.empty() ? merged.cat_ids[k] : l.cat_id}, {"p", l.p}, {"hard", l.hard}});
    }
    rows.push_back({{"doc_id", merged.doc_ids[i]}, {"labels", std::move(labels)}});
  }
  detail::write_jsonl(path, rows);
}

MergedLabels load_label_dir(const fs::path& dir, Taxonomy taxonomy, std::span<const std::string> category_order) {
  std::vector<fs::path> files;
  for (const auto& c : category_order) {
    const auto path = dir / std::string(to_string(taxonomy)) / (file_safe(c) + ".labels.jsonl");
    if (!fs::exists(path)) throw Error(ErrorCode::MissingOutput, "missing label file " + path.string());
    files.push_back(path);
  }
  return merge_labels(files, category_order);
}

TrainingSet build_training_set(const DocumentCollection& docs, std::span<const MultiLabelAssignment> assignments,
                               Taxonomy taxonomy, std::span<const std::string> category_order,
                               std::span<const ProviderSpec> providers, const Embedder& embedder,
                               bool labeled_only) {
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t k = 0; k < category_order.size(); ++k) column.emplace(category_order[k], k);
  std::unordered_map<std::string, const MultiLabelAssignment*> by_doc;
  for (const auto& a : assignments) by_doc.emplace(a.doc_id, &a);

  TrainingSet set;
  set.category_order.assign(category_order.begin(), category_order.end());
  set.providers.assign(providers.begin(), providers.end());
  std::vector<std::vector<int>> rows;
  std::unordered_set<std::string> keep;
  for (const auto& d : docs) {
    auto it = by_doc.find(d.doc_id);
    if (it == by_doc.end()) continue;
    std::vector<int> row(category_order.size(), 0);
    bool any = false;
    for (const auto& cat : it->second->labels(taxonomy)) {
      auto c = column.find(cat);
      if (c == column.end()) throw Error(ErrorCode::UnknownCategory, "unknown category '" + cat + "'");
      row[c->second] = 1;
      any = true;
    }
    if (labeled_only && !any) continue;
    set.doc_ids.push_back(d.doc_id);
    keep.insert(d.doc_id);
    rows.push_back(std::move(row));
  }
  set.targets = LabelMatrix(rows.size(), category_order.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < category_order.size(); ++k) set.targets(i, k) = rows[i][k];
  }
  if (!set.doc_ids.empty()) {
    const auto subset = docs.subset(keep);
    for (const auto& p : providers) {
      set.features.emplace(p.provider_id, Matrix::from(embedder.embed_documents(p, subset).select(set.doc_ids)));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Job bodies

std::vector<fs::path> label_category(const DocumentCollection& corpus, const CategoryDefinition& category,
                                     std::span<const ProviderSpec> providers, double default_threshold,
                                     const Embedder& embedder, const fs::path& out_dir) {
  if (providers.empty()) throw Error(ErrorCode::InvalidArgument, "no providers for labeling");
  const auto labels_path = out_dir / (file_safe(category.cat_id) + ".labels.jsonl");
  const auto params_path = out_dir / (file_safe(category.cat_id) + ".params.json");
  const double threshold = category.threshold.value_or(default_threshold);

  LabelModelParams params;
  params.cat_id = category.cat_id;
  std::vector<ProbabilisticLabel> labels;

  if (!corpus.empty()) {
    std::map<std::string, EmbeddingMatrix> docs;
    std::map<std::string, EmbeddingVector> defs;
    std::vector<LabelingFunctionSpec> lfs;
    for (const auto& p : providers) {
      docs.emplace(p.provider_id, embedder.embed_documents(p, corpus));
      defs.emplace(p.provider_id, embedder.embed_categories(p, {category}).vector(0));
      lfs.push_back({category.cat_id + "@" + p.provider_id, p, category.cat_id, threshold});
    }
    const auto votes = apply_labeling_functions(docs, defs, lfs);
    try {
      params = fit_label_model(votes);
      params.cat_id = category.cat_id;
      labels = infer_probabilistic_labels(params, votes, category.cat_id);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Unidentifiable && e.code() != ErrorCode::TooFewDocuments &&
          e.code() != ErrorCode::InvalidArgument) {
        throw;
      }
      params = LabelModelParams{};
      params.cat_id = category.cat_id;
      params.method = "majority_vote";
      labels = majority_vote(votes, category.cat_id);
    }
  } else {
    params.method = "majority_vote";
  }

  write_labels(labels_path, labels);
  write_params(params_path, params);
  return {labels_path, params_path};
}

RunManifest label_taxonomy(const DocumentCollection& corpus, const std::vector<CategoryDefinition>& categories,
                           Taxonomy taxonomy, std::span<const ProviderSpec> providers, double threshold,
                           std::size_t workers, std::uint64_t seed, const Embedder& embedder,
                           const fs::path& out_dir) {
  std::vector<JobSpec> jobs;
  std::map<std::string, const CategoryDefinition*> by_id;
  std::vector<std::string> order;
  for (const auto& c : categories) {
    if (c.taxonomy != taxonomy) continue;
    JobSpec job;
    job.job_id = "label:" + std::string(to_string(taxonomy)) + ":" + c.cat_id;
    job.kind = JobKind::label_category;
    job.taxonomy = taxonomy;
    job.cat_id = c.cat_id;
    job.seed = derive_seed(seed, job.job_id);
    jobs.push_back(std::move(job));
    by_id[c.cat_id] = &c;
    order.push_back(c.cat_id);
  }
  const auto label_dir = out_dir / std::string(to_string(taxonomy));
  auto manifest = execute(jobs, workers, [&](const JobSpec& job) {
    return label_category(corpus, *by_id.at(job.cat_id), providers, threshold, embedder, label_dir);
  }, out_dir);

  json providers_json = json::array();
  for (const auto& p : providers) providers_json.push_back(p.token());
  manifest.config = {{"taxonomy", to_string(taxonomy)}, {"providers", providers_json}, {"threshold", threshold},
                     {"seed", seed}};
  if (manifest.ok()) {
    std::vector<fs::path> files;
    for (const auto& c : order) files.push_back(label_dir / (file_safe(c) + ".labels.jsonl"));
    const auto merged_path = out_dir / ("labels_" + std::string(to_string(taxonomy)) + ".jsonl");
    write_merged_labels(merged_path, merge_labels(files, order));
    manifest.reports.push_back({relative_to(merged_path, out_dir), sha256_file(merged_path)});
  }
  detail::write_json(out_dir / "manifest.json", manifest.to_json());
  return manifest;
}

namespace {

DocumentCollection slice(const DocumentCollection& docs, std::size_t begin, std::size_t end) {
  std::vector<Document> out(docs.docs().begin() + static_cast<std::ptrdiff_t>(begin),
                            docs.docs().begin() + static_cast<std::ptrdiff_t>(end));
  return DocumentCollection(std::move(out));
}

/// Shared, read-only inputs for one run-all invocation.
class RunContext {
 public:
  RunContext(const RunConfig& config, std::size_t shard_count)
      : config_(config),
        root_(config.out_dir),
        docs_(load_documents(config.docs, config.load_policy)),
        embedder_(config.stopwords ? load_stopwords(*config.stopwords) : default_stopwords(), config.embeddings_dir) {
    std::vector<CategoryDefinition> all;
    for (const auto& path : config.categories) {
      auto set = load_categories(path);
      all.insert(all.end(), set.entries().begin(), set.entries().end());
    }
    categories_ = CategorySet(std::move(all));
    (void)shard_count;
  }

  const DocumentCollection& docs() const { return docs_; }
  const CategorySet& categories() const { return categories_; }
  const fs::path& root() const { return root_; }

  std::vector<fs::path> run(const JobSpec& job) const {
    switch (job.kind) {
      case JobKind::filter_shard: return run_filter(job);
      case JobKind::label_category: return run_label(job);
      case JobKind::train_chain: return run_train(job);
      case JobKind::predict_shard: return run_predict(job);
      case JobKind::topic_pair: return run_topics(job);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown job kind");
  }

  /// Documents kept by both filter stages, in file order.
  DocumentCollection corpus() const {
    std::unordered_set<std::string> keep;
    for (std::size_t k = 0; k < shard_count(); ++k) {
      for (const auto& d : read_decisions(root_ / filter_output(Taxonomy::ncf, k))) {
        if (d.flag) keep.insert(d.doc_id);
      }
    }
    return docs_.subset(keep);
  }

  std::size_t shard_count() const {
    return std::max<std::size_t>(1, std::min(config_.shards, docs_.size()));
  }

  MergedLabels merged_labels(Taxonomy t) const {
    std::vector<fs::path> files;
    const auto order = categories_.ids(t);
    for (const auto& c : order) files.push_back(root_ / labels_output(t, c));
    return merge_labels(files, order);
  }

  EnsembleModel ensemble(Taxonomy t) const {
    EnsembleModel model;
    model.taxonomy = t;
    for (const auto& p : config_.providers) {
      auto part = read_model(root_ / model_output(p.provider_id, t));
      for (auto& chain : part.chains) model.chains.push_back(std::move(chain));
    }
    return model;
  }

  std::vector<MultiLabelAssignment> predictions() const {
    std::vector<MultiLabelAssignment> all;
    for (std::size_t k = 0; k < shard_count(); ++k) {
      auto part = read_predictions(root_ / predict_output(k));
      all.insert(all.end(), part.begin(), part.end());
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
    return all;
  }

 private:
  std::vector<fs::path> run_filter(const JobSpec& job) const {
    const auto taxonomy = job.taxonomy.value();
    auto shard = slice(docs_, job.begin, job.end);
    if (taxonomy == Taxonomy::ncf) {
      std::unordered_set<std::string> keep;
      for (const auto& d : read_decisions(root_ / filter_output(Taxonomy::hazard, shard_of(job)))) {
        if (d.flag) keep.insert(d.doc_id);
      }
      shard = shard.subset(keep);
    }
    const auto result = filter_corpus(shard, categories_.of(taxonomy), config_.resolve_filter_provider(),
                                      config_.filter_threshold, embedder_);
    const auto out = root_ / filter_output(taxonomy, shard_of(job));
    write_decisions(out, result.decisions);
    return {out};
  }

  std::vector<fs::path> run_label(const JobSpec& job) const {
    const auto taxonomy = job.taxonomy.value();
    const auto* category = categories_.find(taxonomy, job.cat_id);
    if (!category) throw Error(ErrorCode::UnknownCategory, job.cat_id);
    return label_category(corpus(), *category, config_.providers, config_.lf_threshold, embedder_,
                          root_ / "labels" / std::string(to_string(taxonomy)));
  }

  std::vector<fs::path> run_train(const JobSpec& job) const {
    const ProviderSpec* provider = nullptr;
    for (const auto& p : config_.providers) {
      if (p.provider_id == job.provider_id) provider = &p;
    }
    if (!provider) throw Error(ErrorCode::MissingProvider, job.provider_id);

    const auto docs = corpus();
    const auto features = Matrix::from(embedder_.embed_documents(*provider, docs));
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < docs.size(); ++i) row_of.emplace(docs[i].doc_id, i);

    TrainOptions options;
    options.l2 = config_.l2;
    std::vector<fs::path> outputs;
    for (auto t : kTaxonomies) {
      const auto merged = merged_labels(t);
      const auto order = categories_.ids(t);
      // Weakly labeled documents (at least one positive) train the chain.
      std::vector<std::size_t> rows;
      std::vector<std::size_t> merged_rows;
      for (std::size_t i = 0; i < merged.doc_ids.size(); ++i) {
        bool any = false;
        for (std::size_t k = 0; k < order.size(); ++k) any = any || merged.at(i, k).hard == 1;
        if (any) {
          rows.push_back(row_of.at(merged.doc_ids[i]));
          merged_rows.push_back(i);
        }
      }
      LabelMatrix targets(rows.size(), order.size());
      for (std::size_t r = 0; r < merged_rows.size(); ++r) {
        for (std::size_t k = 0; k < order.size(); ++k) targets(r, k) = merged.at(merged_rows[r], k).hard;
      }

      EnsembleModel model;
      model.taxonomy = t;
      if (rows.empty()) {
        ClassifierChain chain;
        chain.category_order = order;
        chain.provider = *provider;
        for (std::size_t k = 0; k < order.size(); ++k) {
          BinaryLinearModel m;
          m.weights.assign(features.cols() + k, 0.0);
          m.l2 = config_.l2;
          m.constant = 0;
          m.warning = true;
          chain.models.push_back(std::move(m));
        }
        model.chains.push_back(std::move(chain));
      } else {
        model.chains.push_back(train_chain(features.select_rows(rows), targets, order, *provider, options));
      }
      const auto out = root_ / model_output(provider->provider_id, t);
      write_model(out, model);
      outputs.push_back(out);
    }
    return outputs;
  }

  std::vector<fs::path> run_predict(const JobSpec& job) const {
    const auto all = corpus();
    std::unordered_set<std::string> in_range;
    for (std::size_t i = job.begin; i < job.end; ++i) in_range.insert(docs_[i].doc_id);
    const auto shard = all.subset(in_range);

    std::map<std::string, MultiLabelAssignment> result;
    for (const auto& d : shard) result[d.doc_id].doc_id = d.doc_id;

    std::map<std::string, Matrix> features;
    if (!shard.empty()) {
      for (const auto& p : config_.providers) features.emplace(p.provider_id, Matrix::from(embedder_.embed_documents(p, shard)));
    }

    for (auto t : kTaxonomies) {
      const auto merged = merged_labels(t);
      std::unordered_map<std::string, std::size_t> merged_row;
      for (std::size_t i = 0; i < merged.doc_ids.size(); ++i) merged_row.emplace(merged.doc_ids[i], i);

      // Weak labels stand where they exist; the ensemble fills in the rest.
      std::vector<std::size_t> unlabeled;
      for (std::size_t i = 0; i < shard.size(); ++i) {
        const auto& id = shard[i].doc_id;
        auto it = merged_row.find(id);
        bool any = false;
        if (it != merged_row.end()) {
          for (std::size_t k = 0; k < merged.cat_ids.size(); ++k) {
            if (merged.at(it->second, k).hard == 1) {
              result[id].labels(t).push_back(merged.cat_ids[k]);
              any = true;
            }
          }
        }
        if (!any) unlabeled.push_back(i);
      }
      if (unlabeled.empty()) continue;

      const auto model = ensemble(t);
      std::map<std::string, Matrix> subset_features;
      for (const auto& [id, m] : features) subset_features.emplace(id, m.select_rows(unlabeled));
      const auto predicted = ensemble_predict(model, subset_features);
      for (std::size_t r = 0; r < unlabeled.size(); ++r) {
        const auto& id = shard[unlabeled[r]].doc_id;
        for (std::size_t k = 0; k < predicted.cols; ++k) {
          if (predicted(r, k) == 1) result[id].labels(t).push_back(model.category_order()[k]);
        }
      }
    }

    std::vector<MultiLabelAssignment> rows;
    rows.reserve(result.size());
    for (auto& [id, a] : result) rows.push_back(std::move(a));
    const auto out = root_ / predict_output(shard_of(job));
    write_predictions(out, rows);
    return {out};
  }

  std::vector<fs::path> run_topics(const JobSpec& job) const {
    const auto assignments = predictions();
    const auto hazard_ids = categories_.ids(Taxonomy::hazard);
    const auto ncf_ids = categories_.ids(Taxonomy::ncf);
    std::string hazard = job.hazard, ncf = job.ncf;
    fs::path out = root_ / (hazard.empty() ? kAutoTopic : topic_output(hazard, ncf));

    if (hazard.empty()) {
      // Largest cell of the filtered view, else of the full matrix; first wins ties.
      const auto counts = pair_count_matrix(assignments, hazard_ids, ncf_ids, config_.min_cell);
      const auto& m = counts.filtered.counts.empty() ? counts.full : counts.filtered;
      std::size_t best = 0;
      for (std::size_t h = 0; h < m.hazard_ids.size(); ++h) {
        for (std::size_t n = 0; n < m.ncf_ids.size(); ++n) {
          if (m.at(h, n) > best) {
            best = m.at(h, n);
            hazard = m.hazard_ids[h];
            ncf = m.ncf_ids[n];
          }
        }
      }
      if (hazard.empty()) {
        hazard = hazard_ids.front();
        ncf = ncf_ids.front();
      }
    }

    const auto subset_ids = select_pair_subset(assignments, hazard, ncf, hazard_ids, ncf_ids);
    const auto subset = docs_.subset({subset_ids.begin(), subset_ids.end()});
    std::map<std::string, TokenList> tokens;
    for (const auto& d : subset) tokens.emplace(d.doc_id, tokenize(d.abstract, embedder_.stopwords()));

    TopicParams params = config_.topics;
    params.seed = job.seed;
    TopicReport report;
    if (subset.empty()) {
      report.hazard = hazard;
      report.ncf = ncf;
    } else {
      const auto embeddings = embedder_.embed_documents(config_.resolve_filter_provider(), subset).select(subset_ids);
      report = run_topic_model(hazard, ncf, embeddings, tokens, params);
    }
    write_topic_report(out, report);
    return {out};
  }

  std::size_t shard_of(const JobSpec& job) const {
    const auto pos = job.job_id.rfind(':');
    return static_cast<std::size_t>(std::stoul(job.job_id.substr(pos + 1)));
  }

  const RunConfig& config_;
  fs::path root_;
  DocumentCollection docs_;
  CategorySet categories_;
  Embedder embedder_;
};

}  // namespace

RunManifest run_all(const RunConfig& config, std::size_t workers, const JobHook& hook) {
  if (workers == 0) throw Error(ErrorCode::InvalidArgument, "workers must be at least 1");
  const RunContext ctx(config, config.shards);
  const auto jobs = plan_jobs(config, ctx.categories(), ctx.docs().size());
  const auto& root = ctx.root();
  fs::create_directories(root);

  auto manifest = execute(jobs, workers, [&](const JobSpec& job) {
    if (hook) hook(job);
    return ctx.run(job);
  }, root);
  manifest.config = config.snapshot();

  auto all_ok = [&](JobKind kind) {
    return std::all_of(manifest.jobs.begin(), manifest.jobs.end(),
                       [&](const JobRecord& r) { return r.spec.kind != kind || r.status == JobStatus::ok; });
  };
  auto record = [&](const fs::path& p) { manifest.reports.push_back({relative_to(p, root), sha256_file(p)}); };

  if (all_ok(JobKind::filter_shard)) {
    for (auto t : kTaxonomies) {
      std::vector<FilterDecision> all;
      for (std::size_t k = 0; k < ctx.shard_count(); ++k) {
        auto part = read_decisions(root / filter_output(t, k));
        all.insert(all.end(), part.begin(), part.end());
      }
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });
      const auto path = root / "reports" / ("decisions_" + std::string(to_string(t)) + ".jsonl");
      write_decisions(path, all);
      record(path);
    }
  }
  if (all_ok(JobKind::label_category)) {
    for (auto t : kTaxonomies) {
      const auto path = root / "reports" / ("labels_" + std::string(to_string(t)) + ".jsonl");
      write_merged_labels(path, ctx.merged_labels(t));
      record(path);
    }
  }
  if (all_ok(JobKind::train_chain)) {
    for (auto t : kTaxonomies) {
      const auto path = root / "reports" / ("model_" + std::string(to_string(t)) + ".json");
      write_model(path, ctx.ensemble(t));
      record(path);
    }
  }
  if (all_ok(JobKind::predict_shard)) {
    const auto predictions = ctx.predictions();
    const auto path = root / "reports" / "predictions.jsonl";
    write_predictions(path, predictions);
    record(path);

    const auto hazard_ids = ctx.categories().ids(Taxonomy::hazard);
    const auto ncf_ids = ctx.categories().ids(Taxonomy::ncf);
    const auto counts = pair_count_matrix(predictions, hazard_ids, ncf_ids, config.min_cell);
    write_pair_csv(root / "reports" / "pairs.csv", counts.full);
    record(root / "reports" / "pairs.csv");
    write_pair_csv(root / "reports" / "pairs_filtered.csv", counts.filtered);
    record(root / "reports" / "pairs_filtered.csv");
    for (auto t : kTaxonomies) {
      const auto ids = ctx.categories().ids(t);
      const auto path_h = root / "reports" / ("histogram_" + std::string(to_string(t)) + ".csv");
      write_class_histogram(path_h, per_class_counts(predictions, t, ids));
      record(path_h);
    }
  }

  detail::write_json(root / "manifest.json", manifest.to_json());
  return manifest;
}

}  // namespace weaklabeler
