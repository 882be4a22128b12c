#include "weaklabeler/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "jsonio.hpp"
#include "weaklabeler/error.hpp"
#include "weaklabeler/hashing.hpp"

namespace weaklabeler {

using nlohmann::json;

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double linear(std::span<const double> w, double b, std::span<const double> x) {
  double z = b;
  for (std::size_t d = 0; d < w.size(); ++d) z += w[d] * x[d];
  return z;
}

void check_targets(const Matrix& features, std::span<const int> targets) {
  if (features.rows() != targets.size()) {
    throw Error(ErrorCode::InvalidArgument, "features have " + std::to_string(features.rows()) +
                                                " rows but targets " + std::to_string(targets.size()));
  }
  for (int y : targets) {
    if (y != 0 && y != 1) throw Error(ErrorCode::InvalidArgument, "targets must be 0 or 1");
  }
}

// Base features followed by `labels` columns 0..k-1.
Matrix augment(const Matrix& features, const LabelMatrix& labels, std::size_t k) {
  Matrix out(features.rows(), features.cols() + k);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto src = features.row(i);
    auto dst = out.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    for (std::size_t c = 0; c < k; ++c) dst[features.cols() + c] = labels(i, c);
  }
  return out;
}

}  // namespace

ClassWeights balanced_class_weights(std::span<const int> targets) {
  const double n = static_cast<double>(targets.size());
  const double pos = static_cast<double>(std::count(targets.begin(), targets.end(), 1));
  const double neg = n - pos;
  ClassWeights w;
  if (neg > 0) w.negative = n / (2.0 * neg);
  if (pos > 0) w.positive = n / (2.0 * pos);
  return w;
}

double BinaryLinearModel::probability(std::span<const double> x) const {
  if (constant) return static_cast<double>(*constant);
  return sigmoid(linear(weights, bias, x));
}

ObjectiveValue weighted_logistic_objective(const Matrix& features, std::span<const int> targets,
                                           std::span<const double> weights, double bias, double l2,
                                           const ClassWeights& class_weights) {
  const std::size_t n = features.rows();
  ObjectiveValue out;
  out.grad_weights.assign(weights.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = features.row(i);
    const double z = linear(weights, bias, x);
    const int y = targets[i];
    const double c = y ? class_weights.positive : class_weights.negative;
    loss += c * (softplus(z) - y * z);
    const double g = c * (sigmoid(z) - y);
    for (std::size_t d = 0; d < weights.size(); ++d) out.grad_weights[d] += g * x[d];
    out.grad_bias += g;
  }
  const double inv_n = n ? 1.0 / static_cast<double>(n) : 0.0;
  double sq = 0.0;
  for (std::size_t d = 0; d < weights.size(); ++d) {
    sq += weights[d] * weights[d];
    out.grad_weights[d] = out.grad_weights[d] * inv_n + l2 * weights[d];
  }
  out.grad_bias *= inv_n;
  out.loss = loss * inv_n + 0.5 * l2 * sq;
  return out;
}

BinaryLinearModel train_binary(const Matrix& features, std::span<const int> targets,
                               const TrainOptions& options) {
  check_targets(features, targets);
  if (targets.empty()) throw Error(ErrorCode::InvalidArgument, "no training examples");
  for (double v : features.data()) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite feature value");
  }

  BinaryLinearModel model;
  model.l2 = options.l2;
  model.weights.assign(features.cols(), 0.0);
  model.class_weights = options.class_weights.value_or(balanced_class_weights(targets));

  const auto pos = std::count(targets.begin(), targets.end(), 1);
  if (pos == 0 || static_cast<std::size_t>(pos) == targets.size()) {
    model.constant = pos == 0 ? 0 : 1;
    model.warning = true;
    return model;
  }

  double lr = options.learning_rate;
  auto current = weighted_logistic_objective(features, targets, model.weights, model.bias, options.l2,
                                             model.class_weights);
  model.loss_trace.push_back(current.loss);
  std::vector<double> trial(model.weights.size());
  for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    double gmax = std::abs(current.grad_bias);
    for (double g : current.grad_weights) gmax = std::max(gmax, std::abs(g));
    if (gmax < options.grad_tol) break;

    for (std::size_t d = 0; d < trial.size(); ++d) trial[d] = model.weights[d] - lr * current.grad_weights[d];
    const double trial_bias = model.bias - lr * current.grad_bias;
    auto next = weighted_logistic_objective(features, targets, trial, trial_bias, options.l2,
                                            model.class_weights);
    model.epochs = epoch + 1;
    if (next.loss > current.loss) {
      lr /= 2.0;
      continue;
    }
    model.weights = trial;
    model.bias = trial_bias;
    current = std::move(next);
    model.loss_trace.push_back(current.loss);
  }
  return model;
}

std::vector<int> LabelMatrix::column(std::size_t k) const {
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = (*this)(i, k);
  return out;
}

LabelMatrix LabelMatrix::select_rows(std::span<const std::size_t> indices) const {
  LabelMatrix out(indices.size(), cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = (*this)(indices[r], c);
  }
  return out;
}

ClassifierChain train_chain(const Matrix& features, const LabelMatrix& targets,
                            std::span<const std::string> category_order,
                            const ProviderSpec& provider, const TrainOptions& options) {
  if (category_order.size() != targets.cols) {
    throw Error(ErrorCode::InvalidArgument, "chain order has " + std::to_string(category_order.size()) +
                                                " categories but targets have " + std::to_string(targets.cols));
  }
  if (features.rows() != targets.rows) {
    throw Error(ErrorCode::InvalidArgument, "feature and target row counts differ");
  }
  ClassifierChain chain;
  chain.category_order.assign(category_order.begin(), category_order.end());
  chain.provider = provider;
  for (std::size_t k = 0; k < targets.cols; ++k) {
    const auto x = augment(features, targets, k);
    const auto y = targets.column(k);
    chain.models.push_back(train_binary(x, y, options));
  }
  return chain;
}

ChainPrediction predict_chain(const ClassifierChain& chain, const Matrix& features) {
  const std::size_t n = features.rows();
  const std::size_t m = chain.models.size();
  ChainPrediction out{Matrix(n, m), LabelMatrix(n, m)};
  for (std::size_t k = 0; k < m; ++k) {
    if (chain.models[k].weights.size() != features.cols() + k) {
      throw Error(ErrorCode::DimensionMismatch,
                  "chain model " + std::to_string(k) + " expects " +
                      std::to_string(chain.models[k].weights.size() - k) + " features, got " +
                      std::to_string(features.cols()));
    }
  }
  std::vector<double> x;
  for (std::size_t i = 0; i < n; ++i) {
    auto base = features.row(i);
    x.assign(base.begin(), base.end());
    for (std::size_t k = 0; k < m; ++k) {
      const double p = chain.models[k].probability(x);
      const int hard = harden(p);
      out.probabilities(i, k) = p;
      out.labels(i, k) = hard;
      x.push_back(hard);
    }
  }
  return out;
}

const std::vector<std::string>& EnsembleModel::category_order() const {
  static const std::vector<std::string> empty;
  return chains.empty() ? empty : chains.front().category_order;
}

LabelMatrix majority_combine(std::span<const LabelMatrix> per_chain) {
  if (per_chain.empty()) throw Error(ErrorCode::InvalidArgument, "no chain predictions to combine");
  const auto rows = per_chain[0].rows, cols = per_chain[0].cols;
  LabelMatrix out(rows, cols);
  for (const auto& p : per_chain) {
    if (p.rows != rows || p.cols != cols) throw Error(ErrorCode::InvalidArgument, "chain prediction shapes differ");
  }
  for (std::size_t idx = 0; idx < rows * cols; ++idx) {
    std::size_t ones = 0;
    for (const auto& p : per_chain) ones += p.values[idx] == 1;
    out.values[idx] = 2 * ones > per_chain.size() ? 1 : 0;
  }
  return out;
}

LabelMatrix ensemble_predict(const EnsembleModel& ensemble, const std::map<std::string, Matrix>& features) {
  if (ensemble.chains.empty()) throw Error(ErrorCode::InvalidArgument, "empty ensemble");
  std::vector<LabelMatrix> votes;
  votes.reserve(ensemble.chains.size());
  for (const auto& chain : ensemble.chains) {
    if (chain.category_order != ensemble.category_order()) {
      throw Error(ErrorCode::InvalidArgument, "ensemble chains disagree on category order");
    }
    auto it = features.find(chain.provider.provider_id);
    if (it == features.end()) {
      throw Error(ErrorCode::MissingProvider, "no features for provider '" + chain.provider.provider_id + "'");
    }
    votes.push_back(predict_chain(chain, it->second).labels);
  }
  return majority_combine(votes);
}

void TrainingSet::validate() const {
  if (targets.rows != doc_ids.size()) throw Error(ErrorCode::InvalidArgument, "target rows do not match documents");
  if (targets.cols != category_order.size()) {
    throw Error(ErrorCode::InvalidArgument, "target columns do not match category order");
  }
  if (providers.empty()) throw Error(ErrorCode::InvalidArgument, "training set has no providers");
  for (const auto& p : providers) {
    auto it = features.find(p.provider_id);
    if (it == features.end()) throw Error(ErrorCode::MissingProvider, "no features for '" + p.provider_id + "'");
    if (it->second.rows() != doc_ids.size()) {
      throw Error(ErrorCode::InvalidArgument, "features for '" + p.provider_id + "' have the wrong row count");
    }
  }
}

TrainingSet TrainingSet::select(std::span<const std::size_t> rows) const {
  TrainingSet out;
  out.category_order = category_order;
  out.providers = providers;
  for (auto r : rows) out.doc_ids.push_back(doc_ids[r]);
  for (const auto& [id, m] : features) out.features.emplace(id, m.select_rows(rows));
  out.targets = targets.select_rows(rows);
  return out;
}

EnsembleModel train_ensemble(const TrainingSet& train, Taxonomy taxonomy, const TrainOptions& options) {
  train.validate();
  EnsembleModel model;
  model.taxonomy = taxonomy;
  for (const auto& p : train.providers) {
    model.chains.push_back(train_chain(train.features.at(p.provider_id), train.targets, train.category_order, p, options));
  }
  return model;
}

std::vector<std::size_t> fold_sizes(std::size_t n, std::size_t k) {
  std::vector<std::size_t> out(k, n / k);
  for (std::size_t f = 0; f < n % k; ++f) ++out[f];
  return out;
}

CrossValidationMetrics cross_validate(const TrainingSet& train, std::size_t k, std::uint64_t seed,
                                      const TrainOptions& options) {
  train.validate();
  const std::size_t n = train.doc_ids.size();
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "cross-validation needs k >= 2");
  if (k > n) {
    throw Error(ErrorCode::InvalidArgument, "k = " + std::to_string(k) + " exceeds " + std::to_string(n) + " documents");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  LabelMatrix predicted(n, train.targets.cols);
  std::size_t start = 0;
  for (auto size : fold_sizes(n, k)) {
    std::vector<std::size_t> held(order.begin() + start, order.begin() + start + size);
    std::vector<std::size_t> rest(order.begin(), order.begin() + start);
    rest.insert(rest.end(), order.begin() + start + size, order.end());
    start += size;

    const auto fold_train = train.select(rest);
    const auto fold_test = train.select(held);
    const auto model = train_ensemble(fold_train, Taxonomy::hazard, options);
    const auto pred = ensemble_predict(model, fold_test.features);
    for (std::size_t r = 0; r < held.size(); ++r) {
      for (std::size_t c = 0; c < pred.cols; ++c) predicted(held[r], c) = pred(r, c);
    }
  }

  CrossValidationMetrics metrics;
  metrics.folds = k;
  const std::size_t m = train.targets.cols;
  std::size_t agree = 0, exact = 0;
  std::vector<std::size_t> tp(m, 0), fp(m, 0), fn(m, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t c = 0; c < m; ++c) {
      const int y = train.targets(i, c), p = predicted(i, c);
      agree += y == p;
      all = all && y == p;
      tp[c] += y && p;
      fp[c] += !y && p;
      fn[c] += y && !p;
    }
    exact += all;
  }
  metrics.label_wise_accuracy = m ? static_cast<double>(agree) / static_cast<double>(n * m) : 1.0;
  metrics.subset_accuracy = static_cast<double>(exact) / static_cast<double>(n);
  for (std::size_t c = 0; c < m; ++c) {
    const auto denom = 2 * tp[c] + fp[c] + fn[c];
    // A label that is never present nor predicted scores 0, as in common ML
    // toolkits.
    metrics.per_label_f1.push_back(denom ? 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0);
  }
  return metrics;
}

std::vector<ClassCount> per_class_counts(std::span<const MultiLabelAssignment> assignments,
                                         Taxonomy taxonomy, std::span<const std::string> categories) {
  std::vector<ClassCount> out;
  out.reserve(categories.size());
  for (const auto& c : categories) out.push_back({c, 0});
  for (const auto& a : assignments) {
    for (const auto& label : a.labels(taxonomy)) {
      auto it = std::find(categories.begin(), categories.end(), label);
      if (it != categories.end()) ++out[static_cast<std::size_t>(it - categories.begin())].count;
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const ClassCount& a, const ClassCount& b) { return a.count > b.count; });
  return out;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json provider_json(const ProviderSpec& p) {
  return {{"id", p.provider_id},
          {"kind", p.kind == ProviderKind::hashed ? "hashed" : "file_backed"},
          {"dim", p.dim},
          {"seed", p.seed}};
}

ProviderSpec provider_from_json(const json& j) {
  ProviderSpec p;
  p.provider_id = j.at("id").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "hashed") {
    p.kind = ProviderKind::hashed;
  } else if (kind == "file_backed") {
    p.kind = ProviderKind::file_backed;
  } else {
    throw Error(ErrorCode::Parse, "unknown provider kind '" + kind + "'");
  }
  p.dim = j.at("dim").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace

void write_class_histogram(const std::filesystem::path& path, std::span<const ClassCount> counts) {
  std::string out = "category,count\n";
  for (const auto& c : counts) out += csv_field(c.cat_id) + "," + std::to_string(c.count) + "\n";
  detail::write_file(path, out);
}

json to_json(const EnsembleModel& model) {
  json chains = json::array();
  for (const auto& chain : model.chains) {
    json models = json::array();
    for (const auto& m : chain.models) {
      models.push_back({{"weights", m.weights},
                        {"bias", m.bias},
                        {"l2", m.l2},
                        {"class_weights", {m.class_weights.negative, m.class_weights.positive}},
                        {"constant", m.constant ? json(*m.constant) : json(nullptr)},
                        {"warning", m.warning},
                        {"epochs", m.epochs}});
    }
    chains.push_back({{"provider", provider_json(chain.provider)}, {"models", std::move(models)}});
  }
  return {{"taxonomy", to_string(model.taxonomy)},
          {"category_order", model.category_order()},
          {"chains", std::move(chains)}};
}

EnsembleModel ensemble_from_json(const json& j) {
  EnsembleModel model;
  try {
    model.taxonomy = parse_taxonomy(j.at("taxonomy").get<std::string>());
    const auto order = j.at("category_order").get<std::vector<std::string>>();
    for (const auto& c : j.at("chains")) {
      ClassifierChain chain;
      chain.category_order = order;
      chain.provider = provider_from_json(c.at("provider"));
      for (const auto& m : c.at("models")) {
        BinaryLinearModel b;
        b.weights = m.at("weights").get<std::vector<double>>();
        b.bias = m.at("bias").get<double>();
        b.l2 = m.at("l2").get<double>();
        const auto cw = m.at("class_weights").get<std::vector<double>>();
        if (cw.size() != 2) throw Error(ErrorCode::Parse, "class_weights must have two entries");
        b.class_weights = {cw[0], cw[1]};
        if (!m.at("constant").is_null()) b.constant = m.at("constant").get<int>();
        b.warning = m.value("warning", false);
        b.epochs = m.value("epochs", std::size_t{0});
        chain.models.push_back(std::move(b));
      }
      if (chain.models.size() != order.size()) {
        throw Error(ErrorCode::Parse, "chain has " + std::to_string(chain.models.size()) + " models for " +
                                          std::to_string(order.size()) + " categories");
      }
      model.chains.push_back(std::move(chain));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("model: ") + e.what());
  }
  return model;
}

void write_model(const std::filesystem::path& path, const EnsembleModel& model) {
  detail::write_json(path, to_json(model));
}

EnsembleModel read_model(const std::filesystem::path& path) { return ensemble_from_json(detail::read_json(path)); }

void write_predictions(const std::filesystem::path& path, std::span<const MultiLabelAssignment> assignments) {
  std::vector<json> rows;
  rows.reserve(assignments.size());
  for (const auto& a : assignments) rows.push_back({{"doc_id", a.doc_id}, {"hazard", a.hazard}, {"ncf", a.ncf}});
  detail::write_jsonl(path, rows);
}

std::vector<MultiLabelAssignment> read_predictions(const std::filesystem::path& path) {
  std::vector<MultiLabelAssignment> out;
  for (const auto& j : detail::read_jsonl(path)) {
    try {
      out.push_back({j.at("doc_id").get<std::string>(),
                     j.value("hazard", std::vector<std::string>{}),
                     j.value("ncf", std::vector<std::string>{})});
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Parse, path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace weaklabeler
