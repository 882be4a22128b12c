#pragma once

// Fixtures, generators and brute-force oracles shared by the unit and
// acceptance tests. Oracles here deliberately avoid the library code paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "weaklabeler/classify.hpp"
#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"
#include "weaklabeler/hashing.hpp"
#include "weaklabeler/matrix.hpp"
#include "weaklabeler/topics.hpp"
#include "weaklabeler/weaklabel.hpp"

#ifndef WEAKLABELER_DATA_DIR
#error "WEAKLABELER_DATA_DIR must be defined"
#endif

namespace testing {

namespace fs = std::filesystem;
using namespace weaklabeler;

inline fs::path data_dir() { return fs::path(WEAKLABELER_DATA_DIR); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("wl-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Oracles

inline double cosine_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  long double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<long double>(x[i]) * y[i];
    nx += static_cast<long double>(x[i]) * x[i];
    ny += static_cast<long double>(y[i]) * y[i];
  }
  return static_cast<double>(dot / (std::sqrt(nx) * std::sqrt(ny)));
}

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

/// W(t,c) = tf(t,c) * ln(1 + A / tf(t)) by direct counting over a list of
/// token lists per cluster.
inline std::vector<std::map<std::string, double>> ctfidf_oracle(
    const std::vector<std::vector<std::string>>& cluster_tokens) {
  std::map<std::string, double> total;
  double tokens = 0;
  for (const auto& c : cluster_tokens) {
    for (const auto& t : c) {
      total[t] += 1;
      tokens += 1;
    }
  }
  const double a = tokens / static_cast<double>(cluster_tokens.size());
  std::vector<std::map<std::string, double>> out;
  for (const auto& c : cluster_tokens) {
    std::map<std::string, double> w;
    for (const auto& [term, tf_t] : total) {
      double tf_tc = 0;
      for (const auto& t : c) tf_tc += (t == term) ? 1 : 0;
      if (tf_tc > 0) w[term] = tf_tc * std::log(1.0 + a / tf_t);
    }
    out.push_back(std::move(w));
  }
  return out;
}

/// Central finite-difference gradient of `f` at `x`.
template <class F>
std::vector<double> finite_difference(F f, std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// Independent binary relevance: one train_binary per label on base features only.
inline LabelMatrix binary_relevance_predict(const Matrix& train_x, const LabelMatrix& train_y, const Matrix& test_x,
                                            const TrainOptions& options = {}) {
  LabelMatrix out(test_x.rows(), train_y.cols);
  for (std::size_t k = 0; k < train_y.cols; ++k) {
    const auto y = train_y.column(k);
    const auto model = train_binary(train_x, y, options);
    for (std::size_t i = 0; i < test_x.rows(); ++i) out(i, k) = model.probability(test_x.row(i)) >= 0.5 ? 1 : 0;
  }
  return out;
}

inline double subset_accuracy(const LabelMatrix& a, const LabelMatrix& b) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.rows; ++i) {
    bool same = true;
    for (std::size_t k = 0; k < a.cols; ++k) same = same && a(i, k) == b(i, k);
    hits += same ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(a.rows);
}

// ---------------------------------------------------------------------------
// Generators

struct LfTruth {
  double s;
  double t;
};

struct SyntheticVotes {
  VoteMatrix votes;
  std::vector<int> truth;
};

/// y ~ Bernoulli(prior); vote_j = 1 w.p. s_j when y = 1 and w.p. 1 - t_j when y = 0.
inline SyntheticVotes synthetic_votes(std::size_t n, double prior, const std::vector<LfTruth>& lfs,
                                      std::uint64_t seed) {
  Rng rng(seed);
  SyntheticVotes out;
  for (std::size_t j = 0; j < lfs.size(); ++j) out.votes.lf_ids.push_back("lf" + std::to_string(j));
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(prior) ? 1 : 0;
    out.truth.push_back(y);
    out.votes.doc_ids.push_back("d" + std::to_string(i));
    for (const auto& lf : lfs) {
      const bool one = y == 1 ? rng.bernoulli(lf.s) : !rng.bernoulli(lf.t);
      out.votes.votes.push_back(one ? 1 : 0);
    }
  }
  return out;
}

inline const std::vector<LfTruth>& reference_lfs() {
  static const std::vector<LfTruth> lfs = {{0.9, 0.8}, {0.7, 0.9}, {0.6, 0.6}};
  return lfs;
}
inline constexpr double kReferencePrior = 0.3;

inline double hard_accuracy(const std::vector<ProbabilisticLabel>& labels, const std::vector<int>& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i].hard == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

struct ChainBenchmark {
  Matrix x;
  LabelMatrix y;
};

/// x ~ N(0, I_5); y1 = [x0 > 0], y2 = [x1 > 0], y3 = (y1 AND y2) XOR Bernoulli(0.02).
/// y3 is not linearly separable from x alone but is from (x, y1, y2).
inline ChainBenchmark chain_benchmark(std::size_t n, Rng& rng) {
  ChainBenchmark b{gaussian_matrix(n, 5, rng), LabelMatrix(n, 3)};
  for (std::size_t i = 0; i < n; ++i) {
    const int y1 = b.x(i, 0) > 0 ? 1 : 0;
    const int y2 = b.x(i, 1) > 0 ? 1 : 0;
    const int flip = rng.bernoulli(0.02) ? 1 : 0;
    b.y(i, 0) = y1;
    b.y(i, 1) = y2;
    b.y(i, 2) = (y1 & y2) ^ flip;
  }
  return b;
}

/// Bundled separable multi-label corpus as a TrainingSet under one hashed provider.
inline TrainingSet synthetic_multilabel_set(const ProviderSpec& provider) {
  const auto dir = data_dir() / "synthetic_multilabel";
  const auto docs = load_documents(dir / "docs.jsonl", LoadPolicy::fail_fast);
  const auto cats = load_categories(dir / "categories.json");
  const auto targets = read_predictions(dir / "targets.jsonl");
  std::map<std::string, const MultiLabelAssignment*> by_id;
  for (const auto& t : targets) by_id[t.doc_id] = &t;

  TrainingSet set;
  set.category_order = cats.ids(Taxonomy::hazard);
  set.providers = {provider};
  set.targets = LabelMatrix(docs.size(), set.category_order.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    set.doc_ids.push_back(docs[i].doc_id);
    const auto& labels = by_id.at(docs[i].doc_id)->hazard;
    for (std::size_t k = 0; k < set.category_order.size(); ++k) {
      set.targets(i, k) =
          std::find(labels.begin(), labels.end(), set.category_order[k]) != labels.end() ? 1 : 0;
    }
  }
  Embedder embedder;
  set.features.emplace(provider.provider_id, Matrix::from(embedder.embed_documents(provider, docs)));
  return set;
}

/// Brute-force pair counts straight from label sets.
inline std::size_t pair_count_oracle(const std::vector<MultiLabelAssignment>& assignments, const std::string& h,
                                     const std::string& n) {
  std::size_t count = 0;
  for (const auto& a : assignments) {
    const bool has_h = std::find(a.hazard.begin(), a.hazard.end(), h) != a.hazard.end();
    const bool has_n = std::find(a.ncf.begin(), a.ncf.end(), n) != a.ncf.end();
    count += (has_h && has_n) ? 1 : 0;
  }
  return count;
}

}  // namespace testing
