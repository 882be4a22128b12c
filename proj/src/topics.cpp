#include "weaklabeler/topics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "jsonio.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/hashing.hpp"

namespace weaklabeler {

using nlohmann::json;

PairCounts pair_count_matrix(std::span<const MultiLabelAssignment> assignments,
                             std::span<const std::string> hazard_ids,
                             std::span<const std::string> ncf_ids, std::size_t min_cell) {
  PairCounts out;
  auto& full = out.full;
  full.hazard_ids.assign(hazard_ids.begin(), hazard_ids.end());
  full.ncf_ids.assign(ncf_ids.begin(), ncf_ids.end());
  full.counts.assign(hazard_ids.size() * ncf_ids.size(), 0);

  auto position = [](std::span<const std::string> ids, const std::string& id) -> std::ptrdiff_t {
    auto it = std::find(ids.begin(), ids.end(), id);
    return it == ids.end() ? -1 : it - ids.begin();
  };
  for (const auto& a : assignments) {
    // Duplicate labels within one document count once.
    std::set<std::ptrdiff_t> hs, ns;
    for (const auto& h : a.hazard) {
      if (auto p = position(hazard_ids, h); p >= 0) hs.insert(p);
    }
    for (const auto& n : a.ncf) {
      if (auto p = position(ncf_ids, n); p >= 0) ns.insert(p);
    }
    for (auto h : hs) {
      for (auto n : ns) ++full.counts[static_cast<std::size_t>(h) * ncf_ids.size() + static_cast<std::size_t>(n)];
    }
  }

  std::vector<std::size_t> rows, cols;
  for (std::size_t h = 0; h < hazard_ids.size(); ++h) {
    bool keep = false;
    for (std::size_t n = 0; n < ncf_ids.size(); ++n) keep = keep || full.at(h, n) >= min_cell;
    if (keep) rows.push_back(h);
  }
  for (std::size_t n = 0; n < ncf_ids.size(); ++n) {
    bool keep = false;
    for (std::size_t h = 0; h < hazard_ids.size(); ++h) keep = keep || full.at(h, n) >= min_cell;
    if (keep) cols.push_back(n);
  }
  auto& filtered = out.filtered;
  for (auto h : rows) filtered.hazard_ids.push_back(hazard_ids[h]);
  for (auto n : cols) filtered.ncf_ids.push_back(ncf_ids[n]);
  for (auto h : rows) {
    for (auto n : cols) filtered.counts.push_back(full.at(h, n));
  }
  return out;
}

void write_pair_csv(const std::filesystem::path& path, const PairCountMatrix& matrix) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::string out = "hazard";
  for (const auto& n : matrix.ncf_ids) out += "," + field(n);
  out += "\n";
  for (std::size_t h = 0; h < matrix.hazard_ids.size(); ++h) {
    out += field(matrix.hazard_ids[h]);
    for (std::size_t n = 0; n < matrix.ncf_ids.size(); ++n) out += "," + std::to_string(matrix.at(h, n));
    out += "\n";
  }
  detail::write_file(path, out);
}

std::vector<std::string> select_pair_subset(std::span<const MultiLabelAssignment> assignments,
                                            const std::string& hazard, const std::string& ncf,
                                            std::span<const std::string> hazard_ids,
                                            std::span<const std::string> ncf_ids) {
  if (std::find(hazard_ids.begin(), hazard_ids.end(), hazard) == hazard_ids.end()) {
    throw Error(ErrorCode::UnknownCategory, "unknown hazard category '" + hazard + "'");
  }
  if (std::find(ncf_ids.begin(), ncf_ids.end(), ncf) == ncf_ids.end()) {
    throw Error(ErrorCode::UnknownCategory, "unknown NCF category '" + ncf + "'");
  }
  std::vector<std::string> out;
  for (const auto& a : assignments) {
    if (a.has(Taxonomy::hazard, hazard) && a.has(Taxonomy::ncf, ncf)) out.push_back(a.doc_id);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Reduction PcaReducer::reduce(const Matrix& data, std::size_t target_dim) const {
  const std::size_t n = data.rows(), d = data.cols();
  if (target_dim == 0 || target_dim >= d) {
    throw Error(ErrorCode::InvalidArgument, "target_dim " + std::to_string(target_dim) +
                                                " must be in [1, " + std::to_string(d) + ")");
  }
  if (n < target_dim) {
    throw Error(ErrorCode::TooFewDocuments, std::to_string(n) + " documents for target_dim " +
                                                std::to_string(target_dim));
  }

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += data(i, j);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = data(i, j) - mean[j];
  }

  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = centered.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      if (x[a] == 0.0) continue;
      for (std::size_t b = a; b < d; ++b) cov(a, b) += x[a] * x[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
  }

  Reduction out;
  for (std::size_t a = 0; a < d; ++a) out.total_variance += cov(a, a);
  out.components = Matrix(target_dim, d);

  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto orthogonalize = [&](std::vector<double>& v, std::size_t found) {
    for (std::size_t c = 0; c < found; ++c) {
      auto u = out.components.row(c);
      double proj = 0.0;
      for (std::size_t j = 0; j < d; ++j) proj += u[j] * v[j];
      for (std::size_t j = 0; j < d; ++j) v[j] -= proj * u[j];
    }
  };

  Rng rng(seed_);
  std::vector<double> v(d), w(d);
  for (std::size_t c = 0; c < target_dim; ++c) {
    for (auto& x : v) x = rng.normal();
    orthogonalize(v, c);
    double nv = norm(v);
    for (auto& x : v) x /= nv;

    for (std::size_t iter = 0; iter < max_iters_; ++iter) {
      for (std::size_t a = 0; a < d; ++a) {
        double acc = 0.0;
        auto row = cov.row(a);
        for (std::size_t b = 0; b < d; ++b) acc += row[b] * v[b];
        w[a] = acc;
      }
      orthogonalize(w, c);
      const double nw = norm(w);
      if (nw < 1e-300) {
        // Remaining variance is zero; any orthogonal direction will do.
        break;
      }
      for (auto& x : w) x /= nw;
      double diff = 0.0;
      for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(w[j] - v[j]));
      v.swap(w);
      if (diff < tol_) break;
    }

    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[arg])) arg = j;
    }
    if (v[arg] < 0) {
      for (auto& x : v) x = -x;
    }
    std::copy(v.begin(), v.end(), out.components.row(c).begin());

    // Rayleigh quotient on the deflated covariance.
    double rq = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d; ++b) acc += cov(a, b) * v[b];
      rq += v[a] * acc;
    }
    out.variances.push_back(std::max(rq, 0.0));
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = 0; b < d; ++b) cov(a, b) -= rq * v[a] * v[b];
    }
  }

  out.reduced = Matrix(n, target_dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = centered.row(i);
    for (std::size_t c = 0; c < target_dim; ++c) {
      auto u = out.components.row(c);
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += x[j] * u[j];
      out.reduced(i, c) = acc;
    }
  }
  const double captured = std::accumulate(out.variances.begin(), out.variances.end(), 0.0);
  out.captured_variance_ratio = out.total_variance > 0 ? captured / out.total_variance : 0.0;
  return out;
}

Reduction reduce_dimensions(const Matrix& data, std::size_t target_dim, std::uint64_t seed) {
  return PcaReducer(seed).reduce(data, target_dim);
}

Clustering DensityClusterer::cluster(const Matrix& points, std::span<const std::string> doc_ids) const {
  const std::size_t n = points.rows();
  if (doc_ids.size() != n) throw Error(ErrorCode::InvalidArgument, "one doc id per point expected");
  if (n < min_pts_) {
    throw Error(ErrorCode::TooFewDocuments, std::to_string(n) + " points for min_pts " + std::to_string(min_pts_));
  }

  // Work in doc_id order so the outcome ignores input row order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return doc_ids[a] < doc_ids[b]; });

  const double eps2 = eps_ * eps_;
  std::vector<std::vector<std::size_t>> neighbors(n);  // positions in `order`
  for (std::size_t a = 0; a < n; ++a) {
    auto pa = points.row(order[a]);
    for (std::size_t b = 0; b < n; ++b) {
      auto pb = points.row(order[b]);
      double d2 = 0.0;
      for (std::size_t j = 0; j < pa.size(); ++j) d2 += (pa[j] - pb[j]) * (pa[j] - pb[j]);
      if (d2 <= eps2) neighbors[a].push_back(b);
    }
  }

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int next_id = 0;
  for (std::size_t a = 0; a < n; ++a) {
    if (label[a] != kUnvisited) continue;
    if (neighbors[a].size() < min_pts_) {
      label[a] = kNoiseTopic;
      continue;
    }
    const int id = next_id++;
    label[a] = id;
    std::vector<std::size_t> queue(neighbors[a].begin(), neighbors[a].end());
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const auto b = queue[q];
      if (label[b] == kNoiseTopic) label[b] = id;  // border point
      if (label[b] != kUnvisited) continue;
      label[b] = id;
      if (neighbors[b].size() >= min_pts_) queue.insert(queue.end(), neighbors[b].begin(), neighbors[b].end());
    }
  }

  Clustering out;
  out.clusters.resize(static_cast<std::size_t>(next_id));
  for (int c = 0; c < next_id; ++c) out.clusters[static_cast<std::size_t>(c)].topic_id = c;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& id = doc_ids[order[a]];
    if (label[a] == kNoiseTopic) {
      out.noise.push_back(id);
    } else {
      out.clusters[static_cast<std::size_t>(label[a])].members.push_back(id);
    }
  }
  return out;
}

Clustering cluster_documents(const Matrix& points, std::span<const std::string> doc_ids, double eps,
                             std::size_t min_pts) {
  return DensityClusterer(eps, min_pts).cluster(points, doc_ids);
}

double ClusterTermWeights::weight(std::size_t cluster, const std::string& term) const {
  const auto& w = weights.at(cluster);
  auto it = w.find(term);
  return it == w.end() ? 0.0 : it->second;
}

ClusterTermWeights compute_ctfidf(std::span<const Cluster> clusters,
                                  const std::map<std::string, TokenList>& tokens_by_doc) {
  std::size_t real = 0;
  for (const auto& c : clusters) real += c.topic_id != kNoiseTopic;
  if (real == 0) throw Error(ErrorCode::InvalidArgument, "c-TF-IDF needs at least one non-noise cluster");

  ClusterTermWeights out;
  std::vector<std::map<std::string, std::size_t>> counts(clusters.size());
  std::size_t total_tokens = 0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].topic_id == kNoiseTopic) continue;
    for (const auto& id : clusters[c].members) {
      auto it = tokens_by_doc.find(id);
      if (it == tokens_by_doc.end()) throw Error(ErrorCode::InvalidArgument, "no tokens for document '" + id + "'");
      for (const auto& t : it->second) {
        ++counts[c][t];
        ++out.total_counts[t];
        ++total_tokens;
      }
    }
  }
  if (total_tokens == 0) throw Error(ErrorCode::EmptyVocabulary, "clusters contain no tokens");

  out.average_tokens = static_cast<double>(total_tokens) / static_cast<double>(real);
  out.weights.resize(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& [term, tf] : counts[c]) {
      const double tf_t = static_cast<double>(out.total_counts.at(term));
      out.weights[c][term] = static_cast<double>(tf) * std::log(1.0 + out.average_tokens / tf_t);
    }
  }
  return out;
}

std::vector<TopicSummary> summarize_topics(const ClusterTermWeights& weights, std::span<const Cluster> clusters,
                                           std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "top-k must be at least 1");
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    if (clusters[c].topic_id != kNoiseTopic) order.push_back(c);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (clusters[a].members.size() != clusters[b].members.size()) {
      return clusters[a].members.size() > clusters[b].members.size();
    }
    return clusters[a].topic_id < clusters[b].topic_id;
  });

  std::vector<TopicSummary> out;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto c = order[rank];
    TopicSummary s;
    s.topic_id = static_cast<int>(rank);
    s.doc_count = clusters[c].members.size();
    s.member_doc_ids = clusters[c].members;
    if (c < weights.weights.size()) {
      s.top_terms.assign(weights.weights[c].begin(), weights.weights[c].end());
    }
    std::sort(s.top_terms.begin(), s.top_terms.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (s.top_terms.size() > k) s.top_terms.resize(k);
    out.push_back(std::move(s));
  }
  return out;
}

TopicReport run_topic_model(const std::string& hazard, const std::string& ncf, const EmbeddingMatrix& embeddings,
                            const std::map<std::string, TokenList>& tokens_by_doc, const TopicParams& params,
                            const DimensionReducer* reducer, const Clusterer* clusterer) {
  TopicReport report;
  report.hazard = hazard;
  report.ncf = ncf;
  report.subset_size = embeddings.rows();

  const PcaReducer default_reducer(params.seed);
  const DensityClusterer default_clusterer(params.eps, params.min_pts);
  if (!reducer) reducer = &default_reducer;
  if (!clusterer) clusterer = &default_clusterer;

  auto all_noise = [&] {
    report.noise_doc_ids = embeddings.ids();
    std::sort(report.noise_doc_ids.begin(), report.noise_doc_ids.end());
    report.noise_count = report.noise_doc_ids.size();
    return report;
  };
  if (embeddings.rows() < std::max(params.min_pts, params.target_dim + 1) || params.target_dim >= embeddings.dim()) {
    return all_noise();
  }

  const auto reduction = reducer->reduce(Matrix::from(embeddings), params.target_dim);
  report.captured_variance_ratio = reduction.captured_variance_ratio;
  const auto clustering = clusterer->cluster(reduction.reduced, embeddings.ids());
  if (clustering.clusters.empty()) return all_noise();

  const auto weights = compute_ctfidf(clustering.clusters, tokens_by_doc);
  report.topics = summarize_topics(weights, clustering.clusters, params.top_k);
  report.noise_doc_ids = clustering.noise;
  report.noise_count = clustering.noise.size();
  return report;
}

void write_topic_report(const std::filesystem::path& path, const TopicReport& report) {
  json topics = json::array();
  for (const auto& t : report.topics) {
    json terms = json::array();
    for (const auto& [term, w] : t.top_terms) terms.push_back({term, w});
    topics.push_back({{"topic_id", t.topic_id},
                      {"doc_count", t.doc_count},
                      {"top_terms", std::move(terms)},
                      {"member_doc_ids", t.member_doc_ids}});
  }
  json j = {{"hazard", report.hazard},
            {"ncf", report.ncf},
            {"subset_size", report.subset_size},
            {"noise_count", report.noise_count},
            {"captured_variance_ratio", report.captured_variance_ratio},
            {"topics", std::move(topics)},
            {"noise_doc_ids", report.noise_doc_ids}};
  detail::write_json(path, j);
}

}  // namespace weaklabeler
