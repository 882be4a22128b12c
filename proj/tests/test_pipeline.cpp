#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "doctest.h"
#include "support.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/pipeline.hpp"

using namespace weaklabeler;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

RunConfig mini_config(const fs::path& out) {
  auto j = nlohmann::json::parse(std::ifstream(testing::data_dir() / "mini" / "config.json"));
  auto c = RunConfig::from_json(j, testing::data_dir() / "mini");
  c.out_dir = out;
  c.seed = 17;
  return c;
}

JobSpec job(std::string id, std::vector<std::string> deps = {}) {
  JobSpec s;
  s.job_id = std::move(id);
  s.depends_on = std::move(deps);
  return s;
}

const JobRecord& record(const RunManifest& m, const std::string& id) {
  for (const auto& r : m.jobs) {
    if (r.spec.job_id == id) return r;
  }
  throw std::runtime_error("no job " + id);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("seed derivation is stable and job specific") {
  CHECK(derive_seed(1, "label:hazard:drought") == derive_seed(1, "label:hazard:drought"));
  CHECK(derive_seed(1, "label:hazard:drought") != derive_seed(2, "label:hazard:drought"));
  CHECK(derive_seed(1, "label:hazard:drought") != derive_seed(1, "label:hazard:wildfire"));
  CHECK(derive_seed(5, "x") == stable_hash(5, "x"));
}

TEST_CASE("plan_jobs over the bundled taxonomies") {
  const auto cats =
      CategorySet::merge(load_categories(testing::data_dir() / "categories" / "hazards.json"),
                         load_categories(testing::data_dir() / "categories" / "ncfs.json"));
  RunConfig c;
  c.docs = "docs.jsonl";
  for (std::uint64_t s = 1; s <= 7; ++s) c.providers.push_back(ProviderSpec::hashed(s));
  c.shards = 3;
  const auto jobs = plan_jobs(c, cats, 100);
  std::map<JobKind, std::size_t> counts;
  std::size_t hazard_labels = 0, ncf_labels = 0;
  for (const auto& j : jobs) {
    ++counts[j.kind];
    if (j.kind == JobKind::label_category) (*j.taxonomy == Taxonomy::hazard ? hazard_labels : ncf_labels)++;
  }
  CHECK(hazard_labels == 18);
  CHECK(ncf_labels == 55);
  CHECK(counts[JobKind::train_chain] == 7);
  CHECK(counts[JobKind::filter_shard] == 6);
  CHECK(counts[JobKind::predict_shard] == 3);
  CHECK(counts[JobKind::topic_pair] == 1);

  std::set<std::string> seen;
  for (const auto& j : jobs) {
    for (const auto& d : j.depends_on) CHECK(seen.count(d) == 1);
    CHECK(seen.insert(j.job_id).second);
    CHECK(j.seed == derive_seed(c.seed, j.job_id));
  }

  std::size_t covered = 0;
  for (const auto& j : jobs) {
    if (j.kind == JobKind::predict_shard) covered += j.end - j.begin;
  }
  CHECK(covered == 100);
  for (const auto& j : plan_jobs(c, cats, 2)) {
    if (j.kind == JobKind::predict_shard) CHECK(j.end > j.begin);
  }
}

TEST_CASE("plan_jobs rejects invalid configurations") {
  const auto cats = load_categories(testing::data_dir() / "mini" / "categories.json");
  RunConfig c;
  CHECK(code_of([&] { plan_jobs(c, cats, 10); }) == ErrorCode::InvalidArgument);
  c.providers = {ProviderSpec::hashed(1)};
  c.shards = 0;
  CHECK(code_of([&] { plan_jobs(c, cats, 10); }) == ErrorCode::InvalidArgument);
  c.shards = 2;
  c.filter_threshold = std::nan("");
  CHECK(code_of([&] { plan_jobs(c, cats, 10); }) == ErrorCode::InvalidArgument);
  c.filter_threshold = 0.4;
  c.topic_pairs = {{"nope", "supply_water"}};
  CHECK(code_of([&] { plan_jobs(c, cats, 10); }) == ErrorCode::UnknownCategory);
}

TEST_CASE("execute on an empty job list") {
  const auto m = execute({}, 4, [](const JobSpec&) { return std::vector<fs::path>{}; });
  CHECK(m.jobs.empty());
  CHECK(m.exit_code() == 0);
}

TEST_CASE("execute isolates a failing job") {
  const std::vector<JobSpec> jobs = {job("a"), job("b", {"a"}), job("c", {"b"}), job("d"), job("e", {"d"})};
  std::mutex mu;
  std::vector<std::string> ran;
  const auto m = execute(jobs, 3, [&](const JobSpec& s) {
    {
      std::lock_guard lock(mu);
      ran.push_back(s.job_id);
    }
    if (s.job_id == "b") throw std::runtime_error("boom");
    return std::vector<fs::path>{};
  });
  CHECK(record(m, "a").status == JobStatus::ok);
  CHECK(record(m, "b").status == JobStatus::failed);
  CHECK(record(m, "b").error.find("boom") != std::string::npos);
  CHECK(record(m, "c").status == JobStatus::skipped);
  CHECK(record(m, "d").status == JobStatus::ok);
  CHECK(record(m, "e").status == JobStatus::ok);
  CHECK(m.failed_count() == 1);
  CHECK(m.exit_code() == 2);
  CHECK(std::find(ran.begin(), ran.end(), "c") == ran.end());
  for (std::size_t i = 0; i < jobs.size(); ++i) CHECK(m.jobs[i].spec.job_id == jobs[i].job_id);
}

TEST_CASE("execute respects the worker bound and dependencies") {
  std::vector<JobSpec> jobs;
  for (int i = 0; i < 24; ++i) jobs.push_back(job("j" + std::to_string(i), i >= 12 ? std::vector<std::string>{"j0"} : std::vector<std::string>{}));
  std::atomic<int> active{0}, peak{0};
  std::atomic<bool> j0_done{false};
  std::atomic<bool> early{false};
  const auto m = execute(jobs, 3, [&](const JobSpec& s) {
    const int now = ++active;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    if (!s.depends_on.empty() && !j0_done) early = true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    if (s.job_id == "j0") j0_done = true;
    --active;
    return std::vector<fs::path>{};
  });
  CHECK(m.ok());
  CHECK(peak.load() <= 3);
  CHECK(peak.load() >= 2);
  CHECK_FALSE(early.load());
}

TEST_CASE("execute rejects malformed graphs") {
  const auto noop = [](const JobSpec&) { return std::vector<fs::path>{}; };
  const std::vector<JobSpec> cycle = {job("a", {"b"}), job("b", {"a"})};
  CHECK(code_of([&] { execute(cycle, 2, noop); }) == ErrorCode::InvalidArgument);
  const std::vector<JobSpec> unknown = {job("a", {"zzz"})};
  CHECK(code_of([&] { execute(unknown, 2, noop); }) == ErrorCode::InvalidArgument);
  const std::vector<JobSpec> dup = {job("a"), job("a")};
  CHECK(code_of([&] { execute(dup, 2, noop); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("output digests are relative and verifiable") {
  testing::TempDir dir("exec");
  const std::vector<JobSpec> jobs = {job("w")};
  const auto m = execute(
      jobs, 1,
      [&](const JobSpec&) {
        std::ofstream(dir / "out.txt") << "abc";
        return std::vector<fs::path>{dir / "out.txt"};
      },
      dir.path());
  REQUIRE(m.jobs[0].outputs.size() == 1);
  CHECK(m.jobs[0].outputs[0].path == "out.txt");
  CHECK(m.jobs[0].outputs[0].sha256 == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(verify_manifest(m, dir.path()));
  std::ofstream(dir / "out.txt") << "abd";
  CHECK_FALSE(verify_manifest(m, dir.path()));
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("merge_labels joins per-category files on doc_id") {
  testing::TempDir dir("merge");
  const std::vector<std::string> docs = {"d3", "d1", "d2"};
  const std::vector<std::string> order = {"A", "B"};
  std::vector<fs::path> files;
  for (const auto& cat : {"B", "A"}) {
    std::vector<ProbabilisticLabel> rows;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      const double p = cat == std::string("A") ? 0.1 * static_cast<double>(i + 1) : 0.9;
      rows.push_back({docs[i], cat, p, harden(p)});
    }
    files.push_back(dir / (std::string(cat) + ".labels.jsonl"));
    write_labels(files.back(), rows);
  }
  const auto merged = merge_labels(files, order);
  CHECK(merged.doc_ids == std::vector<std::string>{"d1", "d2", "d3"});
  CHECK(merged.cat_ids == order);
  CHECK(merged.at(0, 0).p == doctest::Approx(0.2));
  CHECK(merged.at(2, 0).p == doctest::Approx(0.1));
  CHECK(merged.at(1, 1).hard == 1);
  const auto a = merged.assignments(Taxonomy::hazard);
  REQUIRE(a.size() == 3);
  CHECK(a[0].hazard == std::vector<std::string>{"B"});

  const std::vector<std::string> wider = {"A", "B", "C"};
  CHECK(code_of([&] { merge_labels(files, wider); }) == ErrorCode::MissingOutput);

  write_labels(dir / "C.labels.jsonl", std::vector<ProbabilisticLabel>{{"d1", "C", 0.7, 1}});
  files.push_back(dir / "C.labels.jsonl");
  CHECK(code_of([&] { merge_labels(files, wider); }) == ErrorCode::InconsistentCoverage);
}

TEST_CASE("run_all is deterministic across worker counts") {
  testing::TempDir dir("runall");
  std::vector<std::vector<OutputDigest>> digests;
  std::string first_manifest;
  for (std::size_t workers : {1u, 4u, 8u}) {
    const auto out = dir / ("w" + std::to_string(workers));
    const auto m = run_all(mini_config(out), workers);
    CHECK(m.exit_code() == 0);
    CHECK(verify_manifest(m, out));
    digests.push_back(m.all_digests());
    const auto text = slurp(out / "manifest.json");
    if (first_manifest.empty()) {
      first_manifest = text;
    } else {
      CHECK(text == first_manifest);
    }
  }
  CHECK(!digests[0].empty());
  CHECK(digests[0] == digests[1]);
  CHECK(digests[0] == digests[2]);

  const auto out = dir / "w1";
  CHECK(fs::exists(out / "reports" / "predictions.jsonl"));
  const auto predictions = read_predictions(out / "reports" / "predictions.jsonl");
  const auto cats = load_categories(testing::data_dir() / "mini" / "categories.json");
  const auto ids = cats.ids(Taxonomy::hazard);
  const auto counts = per_class_counts(predictions, Taxonomy::hazard, ids);
  REQUIRE(counts.size() == ids.size());
  std::map<std::string, std::size_t> recount;
  for (const auto& id : ids) recount[id] = 0;
  for (const auto& a : predictions) {
    for (const auto& h : a.hazard) ++recount[h];
  }
  std::set<std::string> seen;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    CHECK(counts[c].count == recount.at(counts[c].cat_id));
    seen.insert(counts[c].cat_id);
    if (c > 0) CHECK(counts[c].count <= counts[c - 1].count);
  }
  CHECK(seen.size() == ids.size());
}

TEST_CASE("a failing job leaves unrelated outputs unchanged") {
  testing::TempDir dir("fault");
  const auto good = run_all(mini_config(dir / "good"), 2);
  REQUIRE(good.ok());

  const auto cats = load_categories(testing::data_dir() / "mini" / "categories.json");
  const std::string victim = "label:ncf:" + cats.ids(Taxonomy::ncf).front();
  const auto bad = run_all(mini_config(dir / "bad"), 2, [&](const JobSpec& s) {
    if (s.job_id == victim) throw std::runtime_error("injected");
  });
  CHECK(bad.exit_code() == 2);
  CHECK(bad.failed_count() == 1);
  CHECK(record(bad, victim).status == JobStatus::failed);
  for (const auto& r : bad.jobs) {
    if (r.spec.kind == JobKind::train_chain || r.spec.kind == JobKind::predict_shard) {
      CHECK(r.status == JobStatus::skipped);
    }
    if (r.status == JobStatus::ok) CHECK(r.outputs == record(good, r.spec.job_id).outputs);
  }
  CHECK(record(bad, "label:hazard:" + cats.ids(Taxonomy::hazard).front()).status == JobStatus::ok);
  CHECK(fs::exists(dir / "bad" / "manifest.json"));
}

TEST_CASE("label_category falls back to majority vote on tiny corpora") {
  testing::TempDir dir("label");
  const auto cats = load_categories(testing::data_dir() / "mini" / "categories.json");
  const auto all = load_documents(testing::data_dir() / "mini" / "docs.jsonl", LoadPolicy::fail_fast);
  const DocumentCollection few(std::vector<Document>(all.begin(), all.begin() + 5));
  const std::vector<ProviderSpec> providers = {ProviderSpec::hashed(1), ProviderSpec::hashed(2), ProviderSpec::hashed(3)};
  Embedder embedder;
  const auto cat = cats.of(Taxonomy::hazard).front();
  const auto files = label_category(few, cat, providers, 0.4, embedder, dir.path());
  CHECK(files.size() == 2);
  CHECK(read_params(dir / (cat.cat_id + ".params.json")).method == "majority_vote");
  const auto labels = read_labels(dir / (cat.cat_id + ".labels.jsonl"));
  CHECK(labels.size() == 5);
}

#ifdef WEAKLABELER_CLI
TEST_CASE("command-line exit codes") {
  testing::TempDir dir("cli");
  const std::string cli = WEAKLABELER_CLI;
  const auto quiet = " >" + (dir / "log.txt").string() + " 2>&1";
  const auto status = [&](const std::string& args) {
    const int raw = std::system((cli + " " + args + quiet).c_str());
    return WEXITSTATUS(raw);
  };
  CHECK(status("--help") == 0);
  CHECK(status("") == 1);
  CHECK(status("bogus") == 1);
  CHECK(status("--workers 0 run-all") == 1);
  CHECK(status("label --docs x") == 1);
  const auto config = (testing::data_dir() / "mini" / "config.json").string();
  const auto out = (dir / "run").string();
  CHECK(status("--workers 2 --config " + config + " run-all --out " + out) == 0);
  CHECK(fs::exists(dir / "run" / "manifest.json"));
}
#endif
