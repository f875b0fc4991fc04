#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "molgnn/model.hpp"

namespace molgnn {

enum class LossKind { Bce, Mae, MseRmse, Huber };
enum class MetricKind { Rmse, Mae, Mre, RocAuc, PrcAuc };

LossKind loss_from_name(const std::string& name);
std::string to_string(LossKind kind);
MetricKind metric_from_name(const std::string& name);
std::string to_string(MetricKind kind);

/// Differentiable training loss (mse_rmse trains on the mean squared error).
Var loss(LossKind kind, Var pred, const Matrix& target, const Matrix& mask, double huber_delta = 1.0);
/// Reported loss value (mse_rmse reports the root).
double loss_value(LossKind kind, const Matrix& pred, const Matrix& target, const Matrix& mask,
                  double huber_delta = 1.0);

/// Area under the ROC curve from the rank statistic with tie midranks.
/// Throws SingleClassTask when only one class is present.
double roc_auc(const Vector& scores, const Vector& labels);
/// Average precision (step-wise area under the precision-recall curve).
double prc_auc(const Vector& scores, const Vector& labels);

struct MetricResult {
  double value = 0.0;
  std::vector<double> per_task;     // NaN for skipped tasks
  std::vector<int> skipped_tasks;   // single-class tasks (AUC metrics)
};

constexpr double kMreEpsilon = 1e-8;

/// Per-task metric over masked entries, averaged across tasks.
MetricResult metric(MetricKind kind, const Matrix& pred, const Matrix& target, const Matrix& mask);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr = 1e-4;
  std::int64_t step = 0;
  ParameterMap m;
  ParameterMap v;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
void adam_step(AdamState& state, const ParameterMap& grads, ParameterMap& params);

struct TrainConfig {
  double lr_start = 1e-4;
  double lr_end = 1e-6;
  int plateau_patience = 10;
  double plateau_factor = 0.1;
  int early_stop_patience = 20;
  double min_delta = 1e-6;
  LossKind loss = LossKind::MseRmse;
  double huber_delta = 1.0;
  int batch_size = 32;
  int max_epochs = 300;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  /// Reads known keys; unknown keys are ConfigError.
  static TrainConfig from_json(const nlohmann::json& doc);
};

/// Plateau decay plus early stopping on a monitored value. The stop check
/// runs before the decay check, so a stopping epoch never also decays.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainConfig& cfg);

  struct Step {
    int epoch = 0;  // 1-based
    bool improved = false;
    bool decayed = false;
    bool stop = false;
    double lr = 0.0;  // learning rate for the next epoch
  };

  Step observe(double monitored);
  double lr() const { return lr_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  TrainConfig cfg_;
  double lr_;
  double best_;
  int best_epoch_ = 0;
  int epoch_ = 0;
  int since_best_ = 0;
  int since_decay_ = 0;
};

struct LabeledGraphs {
  std::vector<GraphTensor> graphs;
  Matrix labels;  // graphs x tasks
  Matrix mask;    // 1 where a label is present

  std::size_t size() const { return graphs.size(); }
  LabeledGraphs subset(const std::vector<std::size_t>& indices) const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int decays = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains with Adam, plateau decay and early stopping on validation loss,
/// then restores the best epoch's parameters and running statistics.
FitResult fit(GnnModel& model, const LabeledGraphs& train, const LabeledGraphs& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// Predictions for a dataset, batched in order.
Matrix predict_batched(const GnnModel& model, const std::vector<GraphTensor>& graphs, int batch_size = 64);
/// Reported loss of the model on a dataset (inference mode).
double evaluate_loss(const GnnModel& model, const LabeledGraphs& data, const TrainConfig& cfg);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

struct PretrainConfig {
  double mask_rate = 0.15;
  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // on masked training positions
};

struct PretrainResult {
  ParameterMap core;  // graph-layer parameters, named as in the model
  ParameterMap head;  // mask vector and node classifier
  ParameterMap buffers;  // running statistics of normalized core layers
  std::vector<PretrainEpoch> history;
  int num_classes = 0;
};

/// Masked-node symbol prediction. Nodes are masked independently with
/// probability mask_rate; graphs without masked nodes are skipped.
PretrainResult masked_graph_pretrain(const GnnModel& model, const std::vector<GraphTensor>& graphs,
                                     const PretrainConfig& cfg,
                                     const std::function<void(const PretrainEpoch&)>& on_epoch = {});

struct MaskedAccuracy {
  double accuracy = 0.0;
  double majority_rate = 0.0;  // fraction of masked nodes in the most common class
  std::size_t masked = 0;
};

/// Accuracy of a pretrained core + head on freshly masked nodes of `graphs`.
MaskedAccuracy masked_accuracy(const GnnModel& model, const PretrainResult& pretrained,
                               const std::vector<GraphTensor>& graphs, double mask_rate, std::uint64_t seed);

/// Copies every parameter of `core` whose name and shape match into the model.
std::size_t transfer_parameters(GnnModel& model, const ParameterMap& core);

}  // namespace molgnn
