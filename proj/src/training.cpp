#include "molgnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <map>

#include "molgnn/random.hpp"

namespace molgnn {
namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": shapes differ");
}

Matrix stack_rows(const std::vector<Matrix>& parts, Index cols) {
  Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

std::vector<GraphTensor> pick(const std::vector<GraphTensor>& graphs, const std::vector<std::size_t>& idx,
                              std::size_t begin, std::size_t end) {
  std::vector<GraphTensor> out;
  out.reserve(end - begin);
  for (std::size_t k = begin; k < end; ++k) out.push_back(graphs[idx[k]]);
  return out;
}

ParameterMap with_prefix(const ParameterMap& all, const std::string& prefix, bool keep) {
  ParameterMap out;
  for (const auto& [name, value] : all)
    if ((name.rfind(prefix, 0) == 0) == keep) out.emplace(name, value);
  return out;
}

const std::string kPretrainPrefix = "pretrain.";

}  // namespace

// ---------------------------------------------------------------- names

LossKind loss_from_name(const std::string& name) {
  if (name == "bce") return LossKind::Bce;
  if (name == "mae") return LossKind::Mae;
  if (name == "mse_rmse" || name == "rmse" || name == "mse") return LossKind::MseRmse;
  if (name == "huber") return LossKind::Huber;
  throw Error(ErrorCode::ConfigError, "unknown loss '" + name + "'");
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::Bce: return "bce";
    case LossKind::Mae: return "mae";
    case LossKind::MseRmse: return "mse_rmse";
    case LossKind::Huber: return "huber";
  }
  return "?";
}

MetricKind metric_from_name(const std::string& name) {
  if (name == "rmse") return MetricKind::Rmse;
  if (name == "mae") return MetricKind::Mae;
  if (name == "mre") return MetricKind::Mre;
  if (name == "roc_auc") return MetricKind::RocAuc;
  if (name == "prc_auc") return MetricKind::PrcAuc;
  throw Error(ErrorCode::ConfigError, "unknown metric '" + name + "'");
}

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Rmse: return "rmse";
    case MetricKind::Mae: return "mae";
    case MetricKind::Mre: return "mre";
    case MetricKind::RocAuc: return "roc_auc";
    case MetricKind::PrcAuc: return "prc_auc";
  }
  return "?";
}

// ---------------------------------------------------------------- losses

Var loss(LossKind kind, Var pred, const Matrix& target, const Matrix& mask, double huber_delta) {
  switch (kind) {
    case LossKind::Bce: return masked_bce(pred, target, mask);
    case LossKind::Mae: return masked_mae(pred, target, mask);
    case LossKind::MseRmse: return masked_mse(pred, target, mask);
    case LossKind::Huber: return masked_huber(pred, target, mask, huber_delta);
  }
  throw Error(ErrorCode::ConfigError, "unknown loss");
}

double loss_value(LossKind kind, const Matrix& pred, const Matrix& target, const Matrix& mask,
                  double huber_delta) {
  Tape tape;
  tape.set_check_finite(false);
  const double value = loss(kind, tape.constant(pred), target, mask, huber_delta).item();
  return kind == LossKind::MseRmse ? std::sqrt(value) : value;
}

// ---------------------------------------------------------------- metrics

double roc_auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "roc_auc: length mismatch");
  const Index n = scores.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) < scores(b); });
  double positives = 0.0;
  double rank_sum = 0.0;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j < n && scores(order[j]) == scores(order[i])) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (Index k = i; k < j; ++k) {
      if (labels(order[k]) > 0.5) {
        positives += 1.0;
        rank_sum += midrank;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0)
    throw Error(ErrorCode::SingleClassTask, "roc_auc needs both classes");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double prc_auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "prc_auc: length mismatch");
  const Index n = scores.size();
  const double positives = (labels.array() > 0.5).cast<double>().sum();
  if (positives == 0.0 || positives == static_cast<double>(n))
    throw Error(ErrorCode::SingleClassTask, "prc_auc needs both classes");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return scores(a) > scores(b); });
  double tp = 0.0, seen = 0.0, prev_recall = 0.0, ap = 0.0;
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j < n && scores(order[j]) == scores(order[i])) {
      if (labels(order[j]) > 0.5) tp += 1.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

MetricResult metric(MetricKind kind, const Matrix& pred, const Matrix& target, const Matrix& mask) {
  check_same_shape(pred, target, "metric");
  check_same_shape(pred, mask, "metric");
  MetricResult result;
  double total = 0.0;
  int counted = 0;
  for (Index t = 0; t < pred.cols(); ++t) {
    std::vector<Index> rows;
    for (Index r = 0; r < pred.rows(); ++r)
      if (mask(r, t) != 0.0) rows.push_back(r);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (rows.empty()) {
      result.per_task.push_back(nan);
      result.skipped_tasks.push_back(static_cast<int>(t));
      continue;
    }
    double value = 0.0;
    if (kind == MetricKind::RocAuc || kind == MetricKind::PrcAuc) {
      Vector s(static_cast<Index>(rows.size())), y(static_cast<Index>(rows.size()));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        s(static_cast<Index>(k)) = pred(rows[k], t);
        y(static_cast<Index>(k)) = target(rows[k], t);
      }
      try {
        value = kind == MetricKind::RocAuc ? roc_auc(s, y) : prc_auc(s, y);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingleClassTask) throw;
        result.per_task.push_back(nan);
        result.skipped_tasks.push_back(static_cast<int>(t));
        continue;
      }
    } else {
      double acc = 0.0;
      for (Index r : rows) {
        const double diff = pred(r, t) - target(r, t);
        switch (kind) {
          case MetricKind::Rmse: acc += diff * diff; break;
          case MetricKind::Mae: acc += std::abs(diff); break;
          default: acc += std::abs(diff) / std::max(std::abs(target(r, t)), kMreEpsilon); break;
        }
      }
      value = acc / static_cast<double>(rows.size());
      if (kind == MetricKind::Rmse) value = std::sqrt(value);
    }
    result.per_task.push_back(value);
    total += value;
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::SingleClassTask, "no task could be scored");
  result.value = total / counted;
  return result;
}

// ---------------------------------------------------------------- adam

void adam_step(AdamState& state, const ParameterMap& grads, ParameterMap& params) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, value] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    check_same_shape(value, g->second, "adam_step");
    auto [m_it, m_new] = state.m.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    auto [v_it, v_new] = state.v.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    m = state.beta1 * m + (1.0 - state.beta1) * g->second;
    v = state.beta2 * v + (1.0 - state.beta2) * g->second.cwiseAbs2();
    value.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(lr_start > 0.0) || lr_end < 0.0 || lr_end > lr_start)
    throw Error(ErrorCode::ConfigError, "learning rates must satisfy 0 <= lr_end <= lr_start, lr_start > 0");
  if (plateau_patience < 1 || early_stop_patience < 1)
    throw Error(ErrorCode::ConfigError, "patiences must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw Error(ErrorCode::ConfigError, "plateau_factor must be in (0, 1)");
  if (min_delta < 0.0) throw Error(ErrorCode::ConfigError, "min_delta must be >= 0");
  if (!(huber_delta > 0.0)) throw Error(ErrorCode::ConfigError, "huber_delta must be positive");
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorCode::ConfigError, "max_epochs must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_start", lr_start},
          {"lr_end", lr_end},
          {"plateau_patience", plateau_patience},
          {"plateau_factor", plateau_factor},
          {"early_stop_patience", early_stop_patience},
          {"min_delta", min_delta},
          {"loss", to_string(loss)},
          {"huber_delta", huber_delta},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "training config must be an object");
  TrainConfig cfg;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "lr_start") cfg.lr_start = value.get<double>();
      else if (key == "lr_end") cfg.lr_end = value.get<double>();
      else if (key == "plateau_patience") cfg.plateau_patience = value.get<int>();
      else if (key == "plateau_factor") cfg.plateau_factor = value.get<double>();
      else if (key == "early_stop_patience") cfg.early_stop_patience = value.get<int>();
      else if (key == "min_delta") cfg.min_delta = value.get<double>();
      else if (key == "loss") cfg.loss = loss_from_name(value.get<std::string>());
      else if (key == "huber_delta") cfg.huber_delta = value.get<double>();
      else if (key == "batch_size") cfg.batch_size = value.get<int>();
      else if (key == "max_epochs") cfg.max_epochs = value.get<int>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw Error(ErrorCode::ConfigError, "unknown training key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("training config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- scheduler

PlateauScheduler::PlateauScheduler(const TrainConfig& cfg)
    : cfg_(cfg), lr_(cfg.lr_start), best_(std::numeric_limits<double>::infinity()) {}

PlateauScheduler::Step PlateauScheduler::observe(double monitored) {
  Step step;
  step.epoch = ++epoch_;
  if (epoch_ == 1 || best_ - monitored >= cfg_.min_delta) {
    best_ = monitored;
    best_epoch_ = epoch_;
    since_best_ = 0;
    since_decay_ = 0;
    step.improved = true;
  } else {
    ++since_best_;
    ++since_decay_;
    if (since_best_ >= cfg_.early_stop_patience) {
      step.stop = true;
    } else if (since_decay_ >= cfg_.plateau_patience) {
      since_decay_ = 0;
      double next = std::max(lr_ * cfg_.plateau_factor, cfg_.lr_end);
      if (next - cfg_.lr_end <= 1e-9 * cfg_.lr_end) next = cfg_.lr_end;
      step.decayed = next < lr_;
      lr_ = next;
    }
  }
  step.lr = lr_;
  return step;
}

// ---------------------------------------------------------------- datasets

LabeledGraphs LabeledGraphs::subset(const std::vector<std::size_t>& indices) const {
  LabeledGraphs out;
  out.labels.resize(static_cast<Index>(indices.size()), labels.cols());
  out.mask.resize(static_cast<Index>(indices.size()), mask.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= graphs.size()) throw Error(ErrorCode::ShapeMismatch, "subset index out of range");
    out.graphs.push_back(graphs[indices[k]]);
    out.labels.row(static_cast<Index>(k)) = labels.row(static_cast<Index>(indices[k]));
    out.mask.row(static_cast<Index>(k)) = mask.row(static_cast<Index>(indices[k]));
  }
  return out;
}

Matrix predict_batched(const GnnModel& model, const std::vector<GraphTensor>& graphs, int batch_size) {
  if (batch_size < 1) throw Error(ErrorCode::ConfigError, "batch_size must be >= 1");
  std::vector<std::size_t> idx(graphs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<Matrix> parts;
  for (std::size_t begin = 0; begin < graphs.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(graphs.size(), begin + static_cast<std::size_t>(batch_size));
    parts.push_back(model.predict(merge(pick(graphs, idx, begin, end))));
  }
  return stack_rows(parts, model.config().outputs);
}

double evaluate_loss(const GnnModel& model, const LabeledGraphs& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw Error(ErrorCode::EmptyBatch, "empty dataset");
  const Matrix pred = predict_batched(model, data.graphs, std::max(cfg.batch_size, 64));
  return loss_value(cfg.loss, pred, data.labels, data.mask, cfg.huber_delta);
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n" << std::setprecision(17);
  for (const auto& r : history) out << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',' << r.lr << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// ---------------------------------------------------------------- fit

FitResult fit(GnnModel& model, const LabeledGraphs& train, const LabeledGraphs& val, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0 || val.size() == 0) throw Error(ErrorCode::EmptyBatch, "training and validation sets must be non-empty");
  const Index tasks = model.config().outputs;
  if (train.labels.cols() != tasks || val.labels.cols() != tasks)
    throw Error(ErrorCode::ShapeMismatch, "label columns do not match model outputs");

  Rng shuffle_rng = substream(cfg.seed, "shuffle");
  AdamState adam;
  adam.lr = cfg.lr_start;
  PlateauScheduler scheduler(cfg);
  FitResult result;
  ParameterMap best_params = model.parameters();
  ParameterMap best_buffers = model.buffers();

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double weighted = 0.0;
    double weight = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      Matrix labels(static_cast<Index>(end - begin), tasks);
      Matrix mask(static_cast<Index>(end - begin), tasks);
      for (std::size_t k = begin; k < end; ++k) {
        labels.row(static_cast<Index>(k - begin)) = train.labels.row(static_cast<Index>(order[k]));
        mask.row(static_cast<Index>(k - begin)) = train.mask.row(static_cast<Index>(order[k]));
      }
      const double count = (mask.array() != 0.0).cast<double>().sum();
      if (count == 0.0) continue;
      const GraphTensor merged = merge(pick(train.graphs, order, begin, end));
      Tape tape;
      ForwardResult fwd = model.forward(tape, merged, true, false);
      Var l = loss(cfg.loss, fwd.output, labels, mask, cfg.huber_delta);
      if (!std::isfinite(l.item()))
        throw Error(ErrorCode::NonFiniteLoss, "training loss is " + std::to_string(l.item()) + " at epoch " +
                                                  std::to_string(epoch) + ", batch starting at " +
                                                  std::to_string(begin) + ", lr " + std::to_string(adam.lr));
      const ParameterMap grads = tape.backward(l);
      adam_step(adam, grads, model.parameters());
      model.update_running_stats(fwd.batch_stats);
      weighted += l.item() * count;
      weight += count;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.lr = adam.lr;
    record.train_loss = weight > 0.0 ? weighted / weight : std::numeric_limits<double>::quiet_NaN();
    if (cfg.loss == LossKind::MseRmse) record.train_loss = std::sqrt(record.train_loss);
    record.val_loss = evaluate_loss(model, val, cfg);
    if (!std::isfinite(record.val_loss))
      throw Error(ErrorCode::NonFiniteLoss, "validation loss is non-finite at epoch " + std::to_string(epoch));

    const auto step = scheduler.observe(record.val_loss);
    if (step.improved) {
      best_params = model.parameters();
      best_buffers = model.buffers();
      result.best_epoch = epoch;
      result.best_val_loss = record.val_loss;
    }
    if (step.decayed) ++result.decays;
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
    if (step.stop) break;
    adam.lr = step.lr;
  }
  model.parameters() = best_params;
  model.buffers() = best_buffers;
  return result;
}

// ---------------------------------------------------------------- pretraining

namespace {

struct SymbolBlock {
  int offset = 0;
  int width = 0;
};

SymbolBlock symbol_block(const GnnModel& model) {
  const auto& features = model.config().features;
  SymbolBlock block;
  block.offset = features.atom_block_offset("symbol");
  if (block.offset < 0) throw Error(ErrorCode::ConfigError, "pretraining needs the 'symbol' atom feature");
  for (const auto& b : features.atom_features)
    if (b.name == "symbol") block.width = b.width();
  return block;
}

std::vector<int> symbol_labels(const Matrix& x, const SymbolBlock& block) {
  std::vector<int> labels(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    Index arg = 0;
    x.row(r).segment(block.offset, block.width).maxCoeff(&arg);
    labels[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return labels;
}

Index core_output_width(const GnnModel& model) {
  return model.layer_input_widths().at(static_cast<std::size_t>(model.num_graph_layers()));
}

struct MaskedLogits {
  Var logits;
  std::map<std::string, BatchStats> observed;
};

/// Replaces masked rows of the node features by the learned mask vector,
/// runs the core layers and the node classifier.
MaskedLogits masked_logits(Tape& tape, const GnnModel& model, const GraphTensor& g, const Vector& masked,
                           const ParameterMap& params, const ParameterMap& buffers, bool training) {
  const ParamSource bind = [&](const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw Error(ErrorCode::InvalidModel, "missing parameter '" + name + "'");
    return tape.parameter(name, it->second);
  };
  MaskedLogits out;
  GraphContext ctx(tape, g);
  LayerMode mode;
  mode.training = training;
  mode.buffers = &buffers;
  mode.observed = &out.observed;
  Var x = tape.constant(g.node_feature);
  Var keep = tape.constant(Matrix((1.0 - masked.array()).matrix()));
  Var mask_col = tape.constant(Matrix(masked));
  Var h = add(scale_rows(x, keep), matmul(mask_col, bind(kPretrainPrefix + "mask")));
  h = model.forward_graph_layers(ctx, h, bind, mode);
  out.logits = add(matmul(h, bind(kPretrainPrefix + "head.W")), bind(kPretrainPrefix + "head.b"));
  return out;
}

Vector draw_mask(Rng& rng, Index nodes, double rate) {
  Vector m(nodes);
  for (Index i = 0; i < nodes; ++i) m(i) = rng.bernoulli(rate) ? 1.0 : 0.0;
  return m;
}

int argmax_row(const Matrix& m, Index r) {
  Index arg = 0;
  m.row(r).maxCoeff(&arg);
  return static_cast<int>(arg);
}

}  // namespace

PretrainResult masked_graph_pretrain(const GnnModel& model, const std::vector<GraphTensor>& graphs,
                                     const PretrainConfig& cfg,
                                     const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (!(cfg.mask_rate > 0.0 && cfg.mask_rate < 1.0))
    throw Error(ErrorCode::ConfigError, "mask_rate must be in (0, 1)");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || !(cfg.lr > 0.0))
    throw Error(ErrorCode::ConfigError, "pretraining needs positive batch_size, epochs and lr");
  if (graphs.empty()) throw Error(ErrorCode::EmptyBatch, "no graphs to pretrain on");
  for (const auto& g : graphs) model.check_layout(g);

  const SymbolBlock block = symbol_block(model);
  const Index in_width = model.config().features.atom_width();
  const Index hidden = core_output_width(model);

  PretrainResult result;
  result.num_classes = block.width;
  const int graph_layers = model.num_graph_layers();
  for (const auto& [name, value] : model.parameters()) {
    for (int k = 0; k < graph_layers; ++k)
      if (name.rfind(GnnModel::layer_prefix(static_cast<std::size_t>(k)), 0) == 0) result.core.emplace(name, value);
  }
  for (const auto& [name, value] : model.buffers()) {
    for (int k = 0; k < graph_layers; ++k)
      if (name.rfind(GnnModel::layer_prefix(static_cast<std::size_t>(k)), 0) == 0) result.buffers.emplace(name, value);
  }

  Rng init = substream(cfg.seed, "pretrain-init");
  const double limit = std::sqrt(6.0 / static_cast<double>(hidden + block.width));
  Matrix w(hidden, block.width);
  for (Index k = 0; k < w.size(); ++k) w.data()[k] = init.uniform(-limit, limit);
  ParameterMap params = result.core;
  params[kPretrainPrefix + "mask"] = Matrix::Zero(1, in_width);
  params[kPretrainPrefix + "head.W"] = w;
  params[kPretrainPrefix + "head.b"] = Matrix::Zero(1, block.width);

  Rng shuffle_rng = substream(cfg.seed, "shuffle");
  Rng mask_rng = substream(cfg.seed, "mask");
  AdamState adam;
  adam.lr = cfg.lr;
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, correct = 0.0, masked_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const GraphTensor merged = merge(pick(graphs, order, begin, end));
      const Vector masked = draw_mask(mask_rng, merged.num_nodes(), cfg.mask_rate);
      const double count = masked.sum();
      if (count == 0.0) continue;
      const std::vector<int> labels = symbol_labels(merged.node_feature, block);
      Tape tape;
      MaskedLogits fwd = masked_logits(tape, model, merged, masked, params, result.buffers, true);
      Var l = softmax_cross_entropy(fwd.logits, labels, masked);
      const ParameterMap grads = tape.backward(l);
      adam_step(adam, grads, params);
      for (const auto& [prefix, stats] : fwd.observed) {
        Matrix& mean = result.buffers.at(prefix + ".mean");
        Matrix& var = result.buffers.at(prefix + ".var");
        mean = kBatchNormMomentum * mean + (1.0 - kBatchNormMomentum) * stats.mean;
        var = kBatchNormMomentum * var + (1.0 - kBatchNormMomentum) * stats.variance;
      }
      const Matrix& z = fwd.logits.value();
      for (Index r = 0; r < z.rows(); ++r)
        if (masked(r) != 0.0 && argmax_row(z, r) == labels[static_cast<std::size_t>(r)]) correct += 1.0;
      loss_sum += l.item() * count;
      masked_total += count;
    }
    PretrainEpoch record;
    record.epoch = epoch;
    record.loss = masked_total > 0.0 ? loss_sum / masked_total : 0.0;
    record.accuracy = masked_total > 0.0 ? correct / masked_total : 0.0;
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);
  }

  for (auto& [name, value] : result.core) value = params.at(name);
  result.head = with_prefix(params, kPretrainPrefix, true);
  return result;
}

MaskedAccuracy masked_accuracy(const GnnModel& model, const PretrainResult& pretrained,
                               const std::vector<GraphTensor>& graphs, double mask_rate, std::uint64_t seed) {
  const SymbolBlock block = symbol_block(model);
  ParameterMap params = pretrained.core;
  for (const auto& [name, value] : pretrained.head) params[name] = value;
  Rng mask_rng = substream(seed, "mask");
  std::vector<double> class_counts(static_cast<std::size_t>(block.width), 0.0);
  double correct = 0.0;
  MaskedAccuracy out;
  for (const auto& g : graphs) {
    model.check_layout(g);
    const Vector masked = draw_mask(mask_rng, g.num_nodes(), mask_rate);
    if (masked.sum() == 0.0) continue;
    const std::vector<int> labels = symbol_labels(g.node_feature, block);
    Tape tape;
    const Matrix z = masked_logits(tape, model, g, masked, params, pretrained.buffers, false).logits.value();
    for (Index r = 0; r < z.rows(); ++r) {
      if (masked(r) == 0.0) continue;
      const int label = labels[static_cast<std::size_t>(r)];
      class_counts[static_cast<std::size_t>(label)] += 1.0;
      if (argmax_row(z, r) == label) correct += 1.0;
      ++out.masked;
    }
  }
  if (out.masked == 0) throw Error(ErrorCode::EmptyMask, "no node was masked");
  const double n = static_cast<double>(out.masked);
  out.accuracy = correct / n;
  out.majority_rate = *std::max_element(class_counts.begin(), class_counts.end()) / n;
  return out;
}

std::size_t transfer_parameters(GnnModel& model, const ParameterMap& core) {
  std::size_t copied = 0;
  for (auto& [name, value] : model.parameters()) {
    const auto it = core.find(name);
    if (it == core.end() || it->second.rows() != value.rows() || it->second.cols() != value.cols()) continue;
    value = it->second;
    ++copied;
  }
  return copied;
}

}  // namespace molgnn
