#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "weaklabeler/corpus.hpp"
#include "weaklabeler/embed.hpp"
#include "weaklabeler/matrix.hpp"
#include "weaklabeler/weaklabel.hpp"

namespace weaklabeler {

inline constexpr double kDefaultL2 = 1e-2;

struct ClassWeights {
  double negative = 1.0;
  double positive = 1.0;

  bool operator==(const ClassWeights&) const = default;
};

/// n_total / (2 n_class) for each class present.
ClassWeights balanced_class_weights(std::span<const int> targets);

/// Logistic regression over `features` (no intercept column; `bias` is kept
/// separately). A model fitted to single-class targets is constant.
struct BinaryLinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  double l2 = kDefaultL2;
  ClassWeights class_weights;
  std::optional<int> constant;  // set for single-class fits
  bool warning = false;
  std::size_t epochs = 0;
  std::vector<double> loss_trace;  // loss after each accepted step, starting at init

  double probability(std::span<const double> x) const;
};

struct ObjectiveValue {
  double loss = 0.0;
  std::vector<double> grad_weights;
  double grad_bias = 0.0;
};

/// Mean class-weighted logistic loss plus (l2/2)‖w‖², with its gradient.
ObjectiveValue weighted_logistic_objective(const Matrix& features, std::span<const int> targets,
                                           std::span<const double> weights, double bias, double l2,
                                           const ClassWeights& class_weights);

struct TrainOptions {
  double l2 = kDefaultL2;
  std::optional<ClassWeights> class_weights;  // balanced when empty
  double learning_rate = 0.1;
  std::size_t max_epochs = 500;
  double grad_tol = 1e-6;
};

/// Full-batch gradient descent; a step that increases the loss is rejected
/// and the learning rate halved.
BinaryLinearModel train_binary(const Matrix& features, std::span<const int> targets,
                               const TrainOptions& options = {});

/// Targets as a documents x categories 0/1 matrix.
struct LabelMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> values;

  LabelMatrix() = default;
  LabelMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0) {}
  int& operator()(std::size_t i, std::size_t k) { return values[i * cols + k]; }
  int operator()(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
  std::vector<int> column(std::size_t k) const;
  LabelMatrix select_rows(std::span<const std::size_t> indices) const;
};

struct ClassifierChain {
  std::vector<std::string> category_order;
  std::vector<BinaryLinearModel> models;
  ProviderSpec provider;
};

/// Model k sees the base features followed by the true labels of categories
/// 0..k-1. Throws InvalidArgument if `category_order` does not match the
/// target columns.
ClassifierChain train_chain(const Matrix& features, const LabelMatrix& targets,
                            std::span<const std::string> category_order,
                            const ProviderSpec& provider, const TrainOptions& options = {});

struct ChainPrediction {
  Matrix probabilities;
  LabelMatrix labels;
};

/// Sequential inference: model k sees the base features followed by the
/// hard predictions of categories 0..k-1.
ChainPrediction predict_chain(const ClassifierChain& chain, const Matrix& features);

struct EnsembleModel {
  Taxonomy taxonomy = Taxonomy::hazard;
  std::vector<ClassifierChain> chains;

  const std::vector<std::string>& category_order() const;
};

/// Per category, 1 iff strictly more than half of the chains predict 1.
LabelMatrix majority_combine(std::span<const LabelMatrix> per_chain);

/// `features` is keyed by provider id. Throws MissingProvider.
LabelMatrix ensemble_predict(const EnsembleModel& ensemble,
                             const std::map<std::string, Matrix>& features);

struct TrainingSet {
  std::vector<std::string> doc_ids;
  std::vector<std::string> category_order;
  std::map<std::string, Matrix> features;  // provider id -> rows aligned with doc_ids
  std::vector<ProviderSpec> providers;
  LabelMatrix targets;

  void validate() const;
  TrainingSet select(std::span<const std::size_t> rows) const;
};

/// One chain per provider, trained independently.
EnsembleModel train_ensemble(const TrainingSet& train, Taxonomy taxonomy,
                             const TrainOptions& options = {});

struct CrossValidationMetrics {
  double label_wise_accuracy = 0.0;
  double subset_accuracy = 0.0;
  std::vector<double> per_label_f1;
  std::size_t folds = 0;
};

/// Seeded shuffle, then k consecutive folds; each fold is held out once
/// while the ensemble trains on the rest. Metrics pool all held-out
/// predictions.
CrossValidationMetrics cross_validate(const TrainingSet& train, std::size_t k, std::uint64_t seed,
                                      const TrainOptions& options = {});

/// Sizes of the k consecutive folds over n items (the first n % k folds get
/// one extra item).
std::vector<std::size_t> fold_sizes(std::size_t n, std::size_t k);

struct ClassCount {
  std::string cat_id;
  std::size_t count = 0;

  bool operator==(const ClassCount&) const = default;
};

/// Document count per category, descending; ties keep `categories` order.
std::vector<ClassCount> per_class_counts(std::span<const MultiLabelAssignment> assignments,
                                         Taxonomy taxonomy,
                                         std::span<const std::string> categories);

/// CSV `category,count`, one row per entry in the order given.
void write_class_histogram(const std::filesystem::path& path, std::span<const ClassCount> counts);

nlohmann::json to_json(const EnsembleModel& model);
EnsembleModel ensemble_from_json(const nlohmann::json& j);
void write_model(const std::filesystem::path& path, const EnsembleModel& model);
EnsembleModel read_model(const std::filesystem::path& path);

void write_predictions(const std::filesystem::path& path,
                       std::span<const MultiLabelAssignment> assignments);
std::vector<MultiLabelAssignment> read_predictions(const std::filesystem::path& path);

}  // namespace weaklabeler
