#include "weaklabeler/weaklabel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "json.hpp"
#include "jsonio.hpp"
#include "weaklabeler/error.hpp"

namespace weaklabeler {

using nlohmann::json;

bool MultiLabelAssignment::has(Taxonomy taxonomy, const std::string& cat_id) const {
  const auto& l = labels(taxonomy);
  return std::find(l.begin(), l.end(), cat_id) != l.end();
}

void VoteMatrix::validate() const {
  if (votes.size() != rows() * cols()) {
    throw Error(ErrorCode::InvalidArgument, "vote matrix shape does not match its ids");
  }
  if (cols() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two labeling functions");
  for (auto v : votes) {
    if (v > 1) throw Error(ErrorCode::InvalidArgument, "votes must be 0 or 1");
  }
}

VoteMatrix apply_labeling_functions(
    const std::map<std::string, EmbeddingMatrix>& docs_by_provider,
    const std::map<std::string, EmbeddingVector>& definition_by_provider,
    std::span<const LabelingFunctionSpec> lfs) {
  if (lfs.empty()) throw Error(ErrorCode::InvalidArgument, "no labeling functions");

  auto docs_for = [&](const LabelingFunctionSpec& lf) -> const EmbeddingMatrix& {
    auto it = docs_by_provider.find(lf.provider.provider_id);
    if (it == docs_by_provider.end()) {
      throw Error(ErrorCode::MissingProvider, "no document embeddings for '" + lf.provider.provider_id + "'");
    }
    return it->second;
  };

  VoteMatrix out;
  out.doc_ids = docs_for(lfs[0]).ids();
  for (const auto& lf : lfs) out.lf_ids.push_back(lf.lf_id);
  out.votes.assign(out.rows() * out.cols(), 0);

  for (std::size_t j = 0; j < lfs.size(); ++j) {
    const auto& lf = lfs[j];
    const auto& docs = docs_for(lf);
    auto def = definition_by_provider.find(lf.provider.provider_id);
    if (def == definition_by_provider.end()) {
      throw Error(ErrorCode::MissingProvider, "no definition embedding for '" + lf.provider.provider_id + "'");
    }
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const auto idx = docs.index_of(out.doc_ids[i]);
      if (idx < 0) {
        throw Error(ErrorCode::MissingProvider,
                    "provider '" + lf.provider.provider_id + "' has no embedding for '" + out.doc_ids[i] + "'");
      }
      const double cs = cosine_similarity(docs.row(static_cast<std::size_t>(idx)), def->second.view());
      out.votes[i * out.cols() + j] = cs > lf.threshold ? 1 : 0;
    }
  }
  return out;
}

std::vector<ProbabilisticLabel> majority_vote(const VoteMatrix& votes, const std::string& cat_id) {
  std::vector<ProbabilisticLabel> out;
  out.reserve(votes.rows());
  for (std::size_t i = 0; i < votes.rows(); ++i) {
    std::size_t ones = 0;
    for (auto v : votes.row(i)) ones += v;
    const double p = votes.cols() ? static_cast<double>(ones) / static_cast<double>(votes.cols()) : 0.0;
    out.push_back({votes.doc_ids[i], cat_id, p, harden(p)});
  }
  return out;
}

namespace {

struct LogTerms {
  double log_prior1, log_prior0;
  // Per LF: log P(vote | y) for vote in {0, 1}, y in {0, 1}.
  std::vector<double> l1_on, l1_off, l0_on, l0_off;
};

LogTerms log_terms(const LabelModelParams& p) {
  LogTerms t;
  t.log_prior1 = std::log(p.prior);
  t.log_prior0 = std::log1p(-p.prior);
  const auto m = p.s.size();
  t.l1_on.resize(m);
  t.l1_off.resize(m);
  t.l0_on.resize(m);
  t.l0_off.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    t.l1_on[j] = std::log(p.s[j]);
    t.l1_off[j] = std::log1p(-p.s[j]);
    t.l0_on[j] = std::log1p(-p.t[j]);
    t.l0_off[j] = std::log(p.t[j]);
  }
  return t;
}

// Joint log-probabilities of row i with y = 1 and y = 0.
std::pair<double, double> joint(const LogTerms& t, std::span<const std::uint8_t> row) {
  double a = t.log_prior1, b = t.log_prior0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j]) {
      a += t.l1_on[j];
      b += t.l0_on[j];
    } else {
      a += t.l1_off[j];
      b += t.l0_off[j];
    }
  }
  return {a, b};
}

double logistic_from_logs(double a, double b) {
  // a, b: log joint for y=1 and y=0.
  const double d = b - a;
  if (d >= 0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

double clamp_param(double v) { return std::clamp(v, kParamClamp, 1.0 - kParamClamp); }

void check_params(const LabelModelParams& params, const VoteMatrix& votes) {
  if (params.s.size() != votes.cols() || params.t.size() != votes.cols()) {
    throw Error(ErrorCode::InvalidArgument, "label model has " + std::to_string(params.s.size()) +
                                                " LFs but votes have " + std::to_string(votes.cols()));
  }
}

}  // namespace

double log_likelihood(const LabelModelParams& params, const VoteMatrix& votes) {
  check_params(params, votes);
  const auto t = log_terms(params);
  double ll = 0.0;
  for (std::size_t i = 0; i < votes.rows(); ++i) {
    auto [a, b] = joint(t, votes.row(i));
    const double m = std::max(a, b);
    ll += m + std::log(std::exp(a - m) + std::exp(b - m));
  }
  return ll;
}

std::vector<double> posteriors(const LabelModelParams& params, const VoteMatrix& votes) {
  check_params(params, votes);
  const auto t = log_terms(params);
  std::vector<double> out(votes.rows());
  for (std::size_t i = 0; i < votes.rows(); ++i) {
    auto [a, b] = joint(t, votes.row(i));
    out[i] = logistic_from_logs(a, b);
  }
  return out;
}

LabelModelParams fit_label_model(const VoteMatrix& votes, const LabelModelOptions& options) {
  votes.validate();
  const std::size_t n = votes.rows();
  const std::size_t m = votes.cols();
  if (n < 10) {
    throw Error(ErrorCode::TooFewDocuments, "label model needs at least 10 documents, got " + std::to_string(n));
  }
  bool identical = true;
  for (std::size_t i = 1; i < n && identical; ++i) {
    identical = std::equal(votes.row(i).begin(), votes.row(i).end(), votes.row(0).begin());
  }
  if (identical) {
    throw Error(ErrorCode::Unidentifiable,
                "every document has the same votes; the label model cannot separate the prior from LF "
                "accuracies, use majority_vote instead");
  }

  std::vector<double> r(n);
  {
    const auto mv = majority_vote(votes);
    for (std::size_t i = 0; i < n; ++i) r[i] = mv[i].p;
  }

  LabelModelParams params;
  params.s.assign(m, 0.5);
  params.t.assign(m, 0.5);
  LabelModelParams next = params;

  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    // M-step. Sums run in row order so results do not depend on scheduling.
    double sum_r = 0.0;
    for (double v : r) sum_r += v;
    const double sum_not_r = static_cast<double>(n) - sum_r;
    next.prior = clamp_param(sum_r / static_cast<double>(n));
    for (std::size_t j = 0; j < m; ++j) {
      double on_pos = 0.0, off_neg = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = votes.at(i, j);
        on_pos += r[i] * v;
        off_neg += (1.0 - r[i]) * (1 - v);
      }
      next.s[j] = sum_r > 0.0 ? clamp_param(on_pos / sum_r) : params.s[j];
      next.t[j] = sum_not_r > 0.0 ? clamp_param(off_neg / sum_not_r) : params.t[j];
    }

    double change = std::abs(next.prior - params.prior);
    for (std::size_t j = 0; j < m; ++j) {
      change = std::max({change, std::abs(next.s[j] - params.s[j]), std::abs(next.t[j] - params.t[j])});
    }
    params.prior = next.prior;
    params.s = next.s;
    params.t = next.t;
    params.iterations = iter + 1;
    params.log_likelihood_trace.push_back(log_likelihood(params, votes));
    if (iter > 0 && change < options.tol) {
      params.converged = true;
      break;
    }

    // E-step.
    r = posteriors(params, votes);
  }

  double mean_acc = 0.0;
  for (std::size_t j = 0; j < m; ++j) mean_acc += (params.s[j] + params.t[j]) / 2.0;
  mean_acc /= static_cast<double>(m);
  if (mean_acc < 0.5) {
    params.prior = 1.0 - params.prior;
    for (std::size_t j = 0; j < m; ++j) {
      const double s = params.s[j];
      params.s[j] = 1.0 - params.t[j];
      params.t[j] = 1.0 - s;
    }
  }
  return params;
}

std::vector<ProbabilisticLabel> infer_probabilistic_labels(const LabelModelParams& params,
                                                           const VoteMatrix& votes,
                                                           const std::string& cat_id) {
  const auto p = posteriors(params, votes);
  std::vector<ProbabilisticLabel> out;
  out.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out.push_back({votes.doc_ids[i], cat_id, p[i], harden(p[i])});
  return out;
}

std::vector<MultiLabelAssignment> union_multilabel(
    std::span<const std::vector<ProbabilisticLabel>> per_category,
    std::span<const std::string> cat_order, Taxonomy taxonomy) {
  if (per_category.size() != cat_order.size()) {
    throw Error(ErrorCode::InvalidArgument, "one label list per category expected");
  }
  std::map<std::string, MultiLabelAssignment> by_doc;
  std::set<std::string> reference;
  for (std::size_t k = 0; k < per_category.size(); ++k) {
    std::set<std::string> ids;
    for (const auto& l : per_category[k]) {
      if (!ids.insert(l.doc_id).second) {
        throw Error(ErrorCode::InconsistentCoverage, "document '" + l.doc_id + "' listed twice for '" + cat_order[k] + "'");
      }
    }
    if (k == 0) {
      reference = ids;
      for (const auto& id : ids) by_doc[id].doc_id = id;
    } else if (ids != reference) {
      throw Error(ErrorCode::InconsistentCoverage,
                  "labels for '" + cat_order[k] + "' cover different documents than '" + cat_order[0] + "'");
    }
  }
  for (std::size_t k = 0; k < per_category.size(); ++k) {
    for (const auto& l : per_category[k]) {
      if (l.hard == 1) by_doc[l.doc_id].labels(taxonomy).push_back(cat_order[k]);
    }
  }
  std::vector<MultiLabelAssignment> out;
  out.reserve(by_doc.size());
  for (auto& [id, a] : by_doc) out.push_back(std::move(a));
  return out;
}

void write_labels(const std::filesystem::path& path, std::span<const ProbabilisticLabel> labels) {
  std::vector<json> rows;
  rows.reserve(labels.size());
  for (const auto& l : labels) {
    rows.push_back({{"doc_id", l.doc_id}, {"cat_id", l.cat_id}, {"p", l.p}, {"hard", l.hard}});
  }
  detail::write_jsonl(path, rows);
}

std::vector<ProbabilisticLabel> read_labels(const std::filesystem::path& path) {
  std::vector<ProbabilisticLabel> out;
  for (const auto& j : detail::read_jsonl(path)) {
    try {
      out.push_back({j.at("doc_id").get<std::string>(), j.at("cat_id").get<std::string>(),
                     j.at("p").get<double>(), j.at("hard").get<int>()});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_params(const std::filesystem::path& path, const LabelModelParams& params) {
  json j = {{"cat_id", params.cat_id},
            {"prior", params.prior},
            {"s", params.s},
            {"t", params.t},
            {"log_likelihood_trace", params.log_likelihood_trace},
            {"iterations", params.iterations},
            {"converged", params.converged},
            {"method", params.method}};
  detail::write_json(path, j);
}

LabelModelParams read_params(const std::filesystem::path& path) {
  const json j = detail::read_json(path);
  LabelModelParams p;
  try {
    p.cat_id = j.at("cat_id").get<std::string>();
    p.prior = j.at("prior").get<double>();
    p.s = j.at("s").get<std::vector<double>>();
    p.t = j.at("t").get<std::vector<double>>();
    p.log_likelihood_trace = j.value("log_likelihood_trace", std::vector<double>{});
    p.iterations = j.value("iterations", std::size_t{0});
    p.converged = j.value("converged", false);
    p.method = j.value("method", std::string("label_model"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
  }
  return p;
}

}  // namespace weaklabeler
