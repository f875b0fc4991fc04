#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <set>
#include <ostream>
#include <sstream>

#include "cli.hpp"
#include "molgnn/dataset_io.hpp"
#include "molgnn/digest.hpp"
#include "molgnn/error.hpp"
#include "molgnn/interpret.hpp"
#include "molgnn/rt_filter.hpp"
#include "molgnn/training.hpp"
#include "settings.hpp"

namespace molgnn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorCode::ConfigError, message); }

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return to_hex(sha256(bytes.str()));
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

/// Bookkeeping for one invocation. Errors raised before `begin()` are
/// configuration problems; afterwards they are module failures.
class Run {
 public:
  Run(std::string command, const Settings& settings, std::ostream& out)
      : command_(std::move(command)), settings_(settings), out_(out), start_(std::chrono::steady_clock::now()) {}

  std::ostream& out() { return out_; }
  bool started() const { return started_; }
  void begin() { started_ = true; }

  void input(const fs::path& path) { inputs_.push_back(path); }
  void output(const fs::path& path) { outputs_.push_back(path); }
  json& extra() { return extra_; }

  void write_manifest(const fs::path& path) {
    json doc;
    doc["command"] = command_;
    doc["toolkit_version"] = kToolkitVersion;
    doc["config"] = settings_.values();
    doc["config_digest"] = to_hex(sha256(settings_.values().dump()));
    doc["seed"] = settings_.values().contains("seed") ? settings_.values()["seed"] : json(nullptr);
    json ins = json::object(), outs = json::object();
    for (const auto& p : inputs_) ins[p.string()] = file_sha256(p);
    for (const auto& p : outputs_) outs[p.string()] = file_sha256(p);
    doc["inputs"] = ins;
    doc["outputs"] = outs;
    doc["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (!extra_.empty()) doc["results"] = extra_;
    std::ofstream file(path);
    if (!file) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
    file << doc.dump(2) << "\n";
  }

 private:
  std::string command_;
  const Settings& settings_;
  std::ostream& out_;
  std::chrono::steady_clock::time_point start_;
  bool started_ = false;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
  json extra_ = json::object();
};

fs::path manifest_path(const Settings& s, const fs::path& primary) {
  const std::string explicit_path = s.text("manifest");
  if (!explicit_path.empty()) return explicit_path;
  return primary.string() + ".manifest.json";
}

// ---------------------------------------------------------------- schema pieces

void append(std::vector<Key>& to, const std::vector<Key>& keys) { to.insert(to.end(), keys.begin(), keys.end()); }

std::vector<Key> feature_keys() {
  return {
      {"atom_features", ValueKind::Strings, json::array(), "atom feature names (default: all)"},
      {"bond_features", ValueKind::Strings, json::array(), "bond feature names (default: all)"},
      {"edge_features", ValueKind::Bool, true, "store bond features on edges"},
      {"self_loops", ValueKind::Bool, false, "add a self loop to every atom"},
  };
}

std::vector<Key> table_keys() {
  return {
      {"smiles_column", ValueKind::String, "smiles", "SMILES column name"},
      {"label_columns", ValueKind::Strings, json::array(), "label columns (default: every other column)"},
      {"strict", ValueKind::Bool, true, "fail on unparseable rows instead of dropping them"},
  };
}

std::vector<Key> model_keys() {
  return {
      {"layer_kind", ValueKind::String, "gcn", "gcn, gin, gat, gat_e or mpnn_e"},
      {"depth", ValueKind::Int, 2, "number of graph layers"},
      {"units", ValueKind::Int, 128, "width of graph and hidden dense layers"},
      {"normalization", ValueKind::String, "none", "none or batch"},
      {"readout", ValueKind::String, "sum", "sum, mean or max"},
  };
}

std::vector<Key> train_keys() {
  const TrainConfig d;
  return {
      {"lr_start", ValueKind::Real, d.lr_start, "initial learning rate"},
      {"lr_end", ValueKind::Real, d.lr_end, "learning-rate floor"},
      {"plateau_patience", ValueKind::Int, d.plateau_patience, "epochs without improvement before decay"},
      {"plateau_factor", ValueKind::Real, d.plateau_factor, "learning-rate decay factor"},
      {"early_stop_patience", ValueKind::Int, d.early_stop_patience, "epochs without improvement before stopping"},
      {"min_delta", ValueKind::Real, d.min_delta, "smallest loss decrease counted as improvement"},
      {"loss", ValueKind::String, "", "bce, mae, mse_rmse or huber (default by task)"},
      {"huber_delta", ValueKind::Real, d.huber_delta, "Huber transition point"},
      {"batch_size", ValueKind::Int, d.batch_size, "graphs per batch"},
      {"max_epochs", ValueKind::Int, d.max_epochs, "epoch limit"},
  };
}

Key seed_key() { return {"seed", ValueKind::Int, 0, "run seed"}; }
Key manifest_key() { return {"manifest", ValueKind::String, "", "run manifest path (default: <output>.manifest.json)"}; }

// ---------------------------------------------------------------- settings -> objects

std::uint64_t seed_of(const Settings& s) {
  const long long seed = s.integer("seed");
  if (seed < 0) config_error("seed must be non-negative");
  return static_cast<std::uint64_t>(seed);
}

FeatureConfig feature_config(const Settings& s) {
  const FeatureConfig standard = FeatureConfig::standard();
  auto names = [](const std::vector<FeatureBlock>& blocks) {
    std::vector<std::string> out;
    for (const auto& b : blocks) out.push_back(b.name);
    return out;
  };
  auto atoms = s.texts("atom_features");
  auto bonds = s.texts("bond_features");
  if (atoms.empty()) atoms = names(standard.atom_features);
  if (bonds.empty()) bonds = names(standard.bond_features);
  return FeatureConfig::from_names(atoms, bonds, s.flag("edge_features"), s.flag("self_loops"));
}

Aggregation aggregation_from_name(const std::string& name) {
  if (name == "sum") return Aggregation::Sum;
  if (name == "mean") return Aggregation::Mean;
  if (name == "max") return Aggregation::Max;
  config_error("unknown readout '" + name + "'");
}

ModelConfig model_config(const Settings& s, const FeatureConfig& features, TaskKind task, int outputs) {
  const LayerKind kind = layer_kind_from_name(s.text("layer_kind"));
  if (kind == LayerKind::Dense || kind == LayerKind::Readout) config_error("layer_kind must be a graph layer");
  const long long depth = s.integer("depth"), units = s.integer("units");
  if (depth < 1 || depth > 64) config_error("depth must be between 1 and 64");
  if (units < 1 || units > 65536) config_error("units must be between 1 and 65536");
  ModelConfig cfg = standard_model(features, kind, static_cast<int>(depth), static_cast<int>(units), task, outputs,
                                   seed_of(s));
  const std::string norm = s.text("normalization");
  if (norm != "none" && norm != "batch") config_error("normalization must be none or batch");
  const Aggregation readout = aggregation_from_name(s.text("readout"));
  for (auto& layer : cfg.layers) {
    if (layer.kind == LayerKind::Readout) layer.readout = readout;
    else if (layer.kind != LayerKind::Dense && norm == "batch") layer.normalization = Normalization::Batch;
  }
  cfg.validate();
  return cfg;
}

TaskKind task_from_name(const std::string& name) {
  if (name == "regression") return TaskKind::Regression;
  if (name == "binary") return TaskKind::Binary;
  config_error("task must be regression or binary");
}

TrainConfig train_config(const Settings& s, TaskKind task) {
  json doc;
  for (const auto& key : train_keys()) doc[key.name] = s.values()[key.name];
  if (doc["loss"].get<std::string>().empty()) doc["loss"] = task == TaskKind::Binary ? "bce" : "mse_rmse";
  doc["seed"] = seed_of(s);
  return TrainConfig::from_json(doc);
}

std::vector<double> split_fractions(const Settings& s) {
  const auto f = s.reals("split");
  if (f.size() < 2 || f.size() > 3) config_error("split needs train,validation[,test] fractions");
  double total = 0.0;
  for (double x : f) {
    if (!(x >= 0.0)) config_error("split fractions must be non-negative");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) config_error("split fractions must sum to 1");
  if (f[0] <= 0.0 || f[1] <= 0.0) config_error("train and validation fractions must be positive");
  return f;
}

bool is_record_file(const fs::path& path) { return path.extension() == ".mgrf"; }

struct LoadedData {
  LabeledGraphs data;
  std::vector<std::string> label_columns;
  std::vector<std::string> smiles;  // empty for record files
  std::vector<RejectedRow> rejected;
};

/// Labeled graphs from a CSV table or a record file.
LoadedData load_labeled(const fs::path& input, const FeatureConfig& features, const std::string& smiles_column,
                        std::vector<std::string> label_columns, bool strict) {
  LoadedData out;
  if (is_record_file(input)) {
    out.data = read_records(input, features);
    if (out.data.labels.cols() == 0) throw Error(ErrorCode::MissingColumn, input.string() + " stores no labels");
    if (label_columns.empty())
      for (Index t = 0; t < out.data.labels.cols(); ++t) label_columns.push_back("task" + std::to_string(t));
    if (static_cast<Index>(label_columns.size()) != out.data.labels.cols())
      throw Error(ErrorCode::ConfigError, "label_columns does not match the tasks stored in " + input.string());
    out.label_columns = label_columns;
    return out;
  }
  const CsvTable csv = read_csv(input.string());
  if (label_columns.empty())
    for (const auto& name : csv.header)
      if (name != smiles_column) label_columns.push_back(name);
  const Table table = table_from_csv(csv, smiles_column, label_columns);
  LoadedDataset loaded = encode_table(table, features, strict);
  out.data = std::move(loaded.data);
  out.label_columns = table.label_columns;
  for (std::size_t r : loaded.rows) out.smiles.push_back(table.rows[r].smiles);
  out.rejected = table.rejected;
  out.rejected.insert(out.rejected.end(), loaded.rejected.begin(), loaded.rejected.end());
  std::sort(out.rejected.begin(), out.rejected.end(),
            [](const RejectedRow& a, const RejectedRow& b) { return a.line < b.line; });
  return out;
}

TaskKind infer_task(const LabeledGraphs& data) {
  for (Index i = 0; i < data.labels.rows(); ++i)
    for (Index t = 0; t < data.labels.cols(); ++t)
      if (data.mask(i, t) > 0.0 && data.labels(i, t) != 0.0 && data.labels(i, t) != 1.0) return TaskKind::Regression;
  return TaskKind::Binary;
}

std::vector<std::vector<std::size_t>> partitions(const LabeledGraphs& data, const std::vector<double>& fractions,
                                                 bool stratify, std::uint64_t seed) {
  if (!stratify) return split(data.size(), fractions, seed);
  if (data.labels.cols() != 1) config_error("stratified splits need exactly one label column");
  std::vector<int> classes;
  for (Index i = 0; i < data.labels.rows(); ++i)
    classes.push_back(data.mask(i, 0) > 0.0 ? static_cast<int>(std::lround(data.labels(i, 0))) : -1);
  return split_stratified(classes, fractions, seed);
}

json metrics_json(const GnnModel& model, const LabeledGraphs& data, const TrainConfig& train) {
  const Matrix pred = predict_batched(model, data.graphs);
  json doc;
  doc["count"] = data.size();
  doc["loss"] = evaluate_loss(model, data, train);
  doc["loss_kind"] = to_string(train.loss);
  const std::vector<MetricKind> kinds = model.config().task == TaskKind::Binary
                                            ? std::vector<MetricKind>{MetricKind::RocAuc, MetricKind::PrcAuc}
                                            : std::vector<MetricKind>{MetricKind::Rmse, MetricKind::Mae, MetricKind::Mre};
  for (MetricKind kind : kinds) {
    try {
      const MetricResult r = metric(kind, pred, data.labels, data.mask);
      doc[to_string(kind)] = r.value;
      if (!r.skipped_tasks.empty()) doc[to_string(kind) + "_skipped_tasks"] = r.skipped_tasks;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingleClassTask && e.code() != ErrorCode::EmptyMask) throw;
      doc[to_string(kind)] = nullptr;
    }
  }
  return doc;
}

std::vector<std::string> read_smiles_list(const fs::path& path, const std::string& smiles_column) {
  std::vector<std::string> out;
  if (path.extension() == ".csv") {
    const CsvTable csv = read_csv(path.string());
    const int at = csv.column(smiles_column);
    if (at < 0) throw Error(ErrorCode::MissingColumn, path.string() + " lacks column '" + smiles_column + "'");
    for (const auto& row : csv.rows)
      out.push_back(static_cast<std::size_t>(at) < row.size() ? row[static_cast<std::size_t>(at)] : std::string());
    return out;
  }
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  for (std::string line; std::getline(in, line);) {
    std::istringstream tokens(line);
    std::string first;
    if (!(tokens >> first) || first[0] == '#') continue;
    out.push_back(first);
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_file(const fs::path& path) {
  if (!fs::exists(path)) config_error("input file " + path.string() + " does not exist");
}

// ---------------------------------------------------------------- commands

std::vector<Key> encode_schema() {
  std::vector<Key> keys = {
      {"input", ValueKind::String, "", "CSV with a SMILES column and label columns"},
      {"output", ValueKind::String, "", "record file to write"},
      {"report", ValueKind::String, "", "parse report path (default: <output>.report.csv)"},
  };
  append(keys, feature_keys());
  append(keys, table_keys());
  keys.push_back(manifest_key());
  return keys;
}

void encode_command(const Settings& s, Run& run) {
  const fs::path input = s.required_text("input"), output = s.required_text("output");
  const fs::path report = s.text("report").empty() ? fs::path(output.string() + ".report.csv") : fs::path(s.text("report"));
  const FeatureConfig features = feature_config(s);
  require_file(input);
  run.begin();
  run.input(input);

  const LoadedData loaded = load_labeled(input, features, s.text("smiles_column"), s.texts("label_columns"), s.flag("strict"));
  write_records(output, loaded.data.graphs, loaded.data.labels, loaded.data.mask, features);
  {
    std::ofstream file(report);
    if (!file) throw Error(ErrorCode::IoError, "cannot write " + report.string());
    write_csv_row(file, {"row", "reason"});
    for (const auto& r : loaded.rejected) write_csv_row(file, {std::to_string(r.line), r.reason});
  }
  run.output(output);
  run.output(report);
  run.extra()["records"] = loaded.data.size();
  run.extra()["rejected_rows"] = json::array();
  for (const auto& r : loaded.rejected) run.extra()["rejected_rows"].push_back(r.line);
  run.extra()["label_columns"] = loaded.label_columns;
  run.extra()["feature_digest"] = to_hex(features.digest());
  run.out() << "encoded " << loaded.data.size() << " records, rejected " << loaded.rejected.size() << " rows\n";
  for (const auto& r : loaded.rejected) run.out() << "  row " << r.line << ": " << r.reason << "\n";
  run.write_manifest(manifest_path(s, output));
}

std::vector<Key> train_schema() {
  std::vector<Key> keys = {
      {"input", ValueKind::String, "", "training CSV or record file"},
      {"output", ValueKind::String, "", "checkpoint to write"},
      {"history", ValueKind::String, "", "history CSV (default: <output>.history.csv)"},
      {"task", ValueKind::String, "", "regression or binary (default: inferred from labels)"},
      {"split", ValueKind::Reals, json::array({0.8, 0.1, 0.1}), "train,validation[,test] fractions"},
      {"stratify", ValueKind::Bool, false, "stratify the split by class (single binary task)"},
      {"pretrained", ValueKind::String, "", "pretrained core parameters to start from"},
      seed_key(),
  };
  append(keys, feature_keys());
  append(keys, table_keys());
  append(keys, model_keys());
  append(keys, train_keys());
  keys.push_back(manifest_key());
  return keys;
}

void train_command(const Settings& s, Run& run) {
  const fs::path input = s.required_text("input"), output = s.required_text("output");
  const fs::path history = s.text("history").empty() ? fs::path(output.string() + ".history.csv") : fs::path(s.text("history"));
  const FeatureConfig features = feature_config(s);
  const auto fractions = split_fractions(s);
  const std::uint64_t seed = seed_of(s);
  std::optional<TaskKind> task;
  if (!s.text("task").empty()) task = task_from_name(s.text("task"));
  model_config(s, features, task.value_or(TaskKind::Regression), 1);  // validates model keys up front
  train_config(s, task.value_or(TaskKind::Regression));
  require_file(input);
  const std::string pretrained = s.text("pretrained");
  if (!pretrained.empty()) require_file(pretrained);

  LoadedData loaded = load_labeled(input, features, s.text("smiles_column"), s.texts("label_columns"), s.flag("strict"));
  const TaskKind kind = task.value_or(infer_task(loaded.data));
  const ModelConfig mcfg = model_config(s, features, kind, static_cast<int>(loaded.data.labels.cols()));
  const TrainConfig tcfg = train_config(s, kind);
  run.begin();
  run.input(input);

  const auto parts = partitions(loaded.data, fractions, s.flag("stratify"), seed);
  const LabeledGraphs train = loaded.data.subset(parts[0]);
  const LabeledGraphs val = loaded.data.subset(parts[1]);
  GnnModel model(mcfg);

  if (!pretrained.empty()) {
    run.input(pretrained);
    json manifest;
    ParameterMap blobs = load_parameters(pretrained, &manifest);
    std::set<std::string> buffer_names;
    for (const auto& name : manifest.value("buffers", std::vector<std::string>{})) buffer_names.insert(name);
    ParameterMap core, buffers;
    for (auto& [name, value] : blobs) (buffer_names.count(name) ? buffers : core)[name] = std::move(value);
    const std::size_t copied = transfer_parameters(model, core);
    for (const auto& [name, value] : buffers) {
      auto it = model.buffers().find(name);
      if (it != model.buffers().end() && it->second.rows() == value.rows() && it->second.cols() == value.cols())
        it->second = value;
    }
    run.out() << "transferred " << copied << " pretrained parameter tensors\n";
  }

  run.out() << "training on " << train.size() << " graphs, validating on " << val.size() << "\n";
  const FitResult fitted = fit(model, train, val, tcfg, [&](const EpochRecord& e) {
    run.out() << "epoch " << e.epoch << " train_loss " << format_number(e.train_loss) << " val_loss "
              << format_number(e.val_loss) << " lr " << format_number(e.lr) << "\n";
  });

  json extra;
  extra["label_columns"] = loaded.label_columns;
  extra["smiles_column"] = s.text("smiles_column");
  extra["split"] = fractions;
  extra["stratify"] = s.flag("stratify");
  extra["seed"] = seed;
  extra["train"] = tcfg.to_json();
  save_checkpoint(output, model, extra);
  write_history_csv(history, fitted.history);
  run.output(output);
  run.output(history);

  run.extra()["best_epoch"] = fitted.best_epoch;
  run.extra()["best_val_loss"] = fitted.best_val_loss;
  run.extra()["epochs"] = fitted.history.size();
  run.extra()["decays"] = fitted.decays;
  if (parts.size() > 2 && !parts[2].empty()) {
    const json test = metrics_json(model, loaded.data.subset(parts[2]), tcfg);
    run.extra()["test"] = test;
    run.out() << "test " << test.dump() << "\n";
  }
  run.out() << "best epoch " << fitted.best_epoch << " val_loss " << format_number(fitted.best_val_loss) << "\n";
  run.write_manifest(manifest_path(s, output));
}

std::vector<Key> evaluate_schema() {
  return {
      {"checkpoint", ValueKind::String, "", "trained checkpoint"},
      {"input", ValueKind::String, "", "CSV or record file with labels"},
      {"output", ValueKind::String, "", "metrics JSON to write"},
      {"subset", ValueKind::String, "all", "all, train, validation or test (uses the checkpoint's split)"},
      {"smiles_column", ValueKind::String, "", "SMILES column (default: as trained)"},
      {"label_columns", ValueKind::Strings, json::array(), "label columns (default: as trained)"},
      {"strict", ValueKind::Bool, true, "fail on unparseable rows instead of dropping them"},
      manifest_key(),
  };
}

void evaluate_command(const Settings& s, Run& run) {
  const fs::path checkpoint = s.required_text("checkpoint"), input = s.required_text("input"),
                 output = s.required_text("output");
  const std::string subset = s.text("subset");
  const std::vector<std::string> subsets = {"train", "validation", "test"};
  const auto which = std::find(subsets.begin(), subsets.end(), subset);
  if (subset != "all" && which == subsets.end()) config_error("subset must be all, train, validation or test");
  require_file(checkpoint);
  require_file(input);
  run.begin();
  run.input(checkpoint);
  run.input(input);

  json extra;
  const GnnModel model = load_checkpoint(checkpoint, &extra);
  std::string smiles_column = s.text("smiles_column");
  if (smiles_column.empty()) smiles_column = extra.value("smiles_column", std::string("smiles"));
  auto labels = s.texts("label_columns");
  if (labels.empty()) labels = extra.value("label_columns", std::vector<std::string>{});
  const LoadedData loaded = load_labeled(input, model.config().features, smiles_column, labels, s.flag("strict"));
  TrainConfig tcfg = extra.contains("train") ? TrainConfig::from_json(extra["train"]) : TrainConfig{};

  LabeledGraphs data = loaded.data;
  if (which != subsets.end()) {
    const auto fractions = extra.value("split", std::vector<double>{});
    if (fractions.empty()) throw Error(ErrorCode::ConfigError, "checkpoint records no split");
    const auto parts = partitions(loaded.data, fractions, extra.value("stratify", false), extra.value("seed", std::uint64_t{0}));
    const auto at = static_cast<std::size_t>(which - subsets.begin());
    if (at >= parts.size()) throw Error(ErrorCode::ConfigError, "checkpoint split has no " + subset + " part");
    data = loaded.data.subset(parts[at]);
  }
  json metrics = metrics_json(model, data, tcfg);
  metrics["subset"] = subset;
  metrics["label_columns"] = loaded.label_columns;
  std::ofstream(output) << metrics.dump(2) << "\n";
  run.output(output);
  run.extra() = metrics;
  run.out() << metrics.dump() << "\n";
  run.write_manifest(manifest_path(s, output));
}

std::vector<Key> predict_schema() {
  return {
      {"checkpoint", ValueKind::String, "", "trained checkpoint"},
      {"input", ValueKind::String, "", "SMILES list (one per line) or CSV"},
      {"output", ValueKind::String, "", "predictions CSV to write"},
      {"smiles_column", ValueKind::String, "smiles", "SMILES column when the input is a CSV"},
      manifest_key(),
  };
}

void predict_command(const Settings& s, Run& run) {
  const fs::path checkpoint = s.required_text("checkpoint"), input = s.required_text("input"),
                 output = s.required_text("output");
  require_file(checkpoint);
  require_file(input);
  run.begin();
  run.input(checkpoint);
  run.input(input);

  json extra;
  const GnnModel model = load_checkpoint(checkpoint, &extra);
  const auto smiles = read_smiles_list(input, s.text("smiles_column"));
  auto names = extra.value("label_columns", std::vector<std::string>{});
  if (static_cast<int>(names.size()) != model.config().outputs) {
    names.clear();
    for (int t = 0; t < model.config().outputs; ++t) names.push_back("output" + std::to_string(t));
  }

  std::vector<GraphTensor> graphs;
  std::vector<std::size_t> ok;
  std::vector<std::string> errors(smiles.size());
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    try {
      graphs.push_back(encode_molecule(smiles[i], model.config().features));
      ok.push_back(i);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  }
  const Matrix pred = graphs.empty() ? Matrix() : predict_batched(model, graphs);
  const bool binary = model.config().task == TaskKind::Binary;

  std::ofstream file(output);
  if (!file) throw Error(ErrorCode::IoError, "cannot write " + output.string());
  std::vector<std::string> header = {"smiles"};
  header.insert(header.end(), names.begin(), names.end());
  header.push_back("error");
  write_csv_row(file, header);
  std::size_t next = 0;
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    std::vector<std::string> row = {smiles[i]};
    const bool good = next < ok.size() && ok[next] == i;
    for (int t = 0; t < model.config().outputs; ++t) {
      if (!good) row.push_back("");
      else {
        const double v = pred(static_cast<Index>(next), t);
        row.push_back(format_number(binary ? sigmoid(v) : v));
      }
    }
    row.push_back(errors[i]);
    write_csv_row(file, row);
    if (good) ++next;
  }
  file.close();
  run.output(output);
  run.extra()["predicted"] = ok.size();
  run.extra()["failed"] = smiles.size() - ok.size();
  run.out() << "predicted " << ok.size() << " of " << smiles.size() << " molecules\n";
  run.write_manifest(manifest_path(s, output));
}

std::vector<Key> explain_schema() {
  return {
      {"checkpoint", ValueKind::String, "", "trained checkpoint"},
      {"smiles", ValueKind::Strings, json::array(), "molecules to explain"},
      {"input", ValueKind::String, "", "SMILES list or CSV with more molecules"},
      {"smiles_column", ValueKind::String, "smiles", "SMILES column when the input is a CSV"},
      {"output", ValueKind::String, "", "directory for the CSV and SVG files"},
      {"method", ValueKind::String, "gradcam", "saliency or gradcam"},
      {"layer", ValueKind::Int, -1, "graph layer for gradcam (default: last)"},
      {"target", ValueKind::Int, -1, "output column for multi-output models"},
      {"width", ValueKind::Int, 400, "SVG width"},
      {"height", ValueKind::Int, 360, "SVG height"},
      seed_key(),
      manifest_key(),
  };
}

void explain_command(const Settings& s, Run& run) {
  const fs::path checkpoint = s.required_text("checkpoint"), output = s.required_text("output");
  const std::string method = s.text("method");
  if (method != "saliency" && method != "gradcam") config_error("method must be saliency or gradcam");
  const AttributionKind kind = method == "saliency" ? AttributionKind::Saliency : AttributionKind::Gradcam;
  std::optional<int> layer, target;
  if (s.integer("layer") >= 0) layer = static_cast<int>(s.integer("layer"));
  if (s.integer("target") >= 0) target = static_cast<int>(s.integer("target"));
  SvgOptions svg;
  svg.width = static_cast<int>(s.integer("width"));
  svg.height = static_cast<int>(s.integer("height"));
  if (svg.width < 50 || svg.height < 50) config_error("SVG width and height must be at least 50");
  svg.seed = seed_of(s);
  require_file(checkpoint);
  std::vector<std::string> smiles = s.texts("smiles");
  const std::string input = s.text("input");
  if (!input.empty()) require_file(input);
  if (smiles.empty() && input.empty()) config_error("give --smiles or --input");
  run.begin();
  run.input(checkpoint);
  if (!input.empty()) {
    run.input(input);
    const auto more = read_smiles_list(input, s.text("smiles_column"));
    smiles.insert(smiles.end(), more.begin(), more.end());
  }

  const GnnModel model = load_checkpoint(checkpoint);
  fs::create_directories(output);
  const fs::path index_path = output / "index.csv";
  std::ofstream index(index_path);
  if (!index) throw Error(ErrorCode::IoError, "cannot write " + index_path.string());
  write_csv_row(index, {"molecule", "smiles", "prediction", "csv", "svg"});
  for (std::size_t i = 0; i < smiles.size(); ++i) {
    const AttributionMap map = explain(model, smiles[i], kind, layer, target);
    const std::string stem = "mol" + std::to_string(i);
    write_attribution_csv(output / (stem + ".csv"), map);
    std::ofstream(output / (stem + ".svg")) << render_svg(map, svg);
    write_csv_row(index, {std::to_string(i), smiles[i], format_number(map.prediction), stem + ".csv", stem + ".svg"});
    run.output(output / (stem + ".csv"));
    run.output(output / (stem + ".svg"));
    run.out() << stem << " " << smiles[i] << " prediction " << format_number(map.prediction) << "\n";
  }
  index.close();
  run.output(index_path);
  const std::string explicit_manifest = s.text("manifest");
  run.write_manifest(explicit_manifest.empty() ? output / "manifest.json" : fs::path(explicit_manifest));
}

std::vector<Key> pretrain_schema() {
  const PretrainConfig d;
  std::vector<Key> keys = {
      {"input", ValueKind::String, "", "unlabeled SMILES list or CSV"},
      {"output", ValueKind::String, "", "core parameter file to write"},
      {"smiles_column", ValueKind::String, "smiles", "SMILES column when the input is a CSV"},
      {"mask_rate", ValueKind::Real, d.mask_rate, "probability of masking each atom"},
      {"lr", ValueKind::Real, d.lr, "Adam learning rate"},
      {"epochs", ValueKind::Int, d.epochs, "training epochs"},
      {"batch_size", ValueKind::Int, d.batch_size, "graphs per batch"},
      {"holdout", ValueKind::Real, 0.1, "fraction of molecules held out for masked accuracy"},
      seed_key(),
  };
  append(keys, feature_keys());
  append(keys, model_keys());
  keys.push_back(manifest_key());
  return keys;
}

void pretrain_command(const Settings& s, Run& run) {
  const fs::path input = s.required_text("input"), output = s.required_text("output");
  const FeatureConfig features = feature_config(s);
  if (features.atom_block_offset("symbol") < 0) config_error("pretraining needs the 'symbol' atom feature");
  const ModelConfig mcfg = model_config(s, features, TaskKind::Regression, 1);
  PretrainConfig pcfg;
  pcfg.mask_rate = s.real("mask_rate");
  pcfg.lr = s.real("lr");
  pcfg.epochs = static_cast<int>(s.integer("epochs"));
  pcfg.batch_size = static_cast<int>(s.integer("batch_size"));
  pcfg.seed = seed_of(s);
  if (!(pcfg.mask_rate > 0.0 && pcfg.mask_rate < 1.0)) config_error("mask_rate must be in (0, 1)");
  if (!(pcfg.lr > 0.0)) config_error("lr must be positive");
  if (pcfg.epochs < 1 || pcfg.batch_size < 1) config_error("epochs and batch_size must be positive");
  const double holdout = s.real("holdout");
  if (!(holdout >= 0.0 && holdout < 1.0)) config_error("holdout must be in [0, 1)");
  require_file(input);
  run.begin();
  run.input(input);

  const auto smiles = read_smiles_list(input, s.text("smiles_column"));
  std::vector<GraphTensor> graphs;
  std::size_t failed = 0;
  for (const auto& smi : smiles) {
    try {
      graphs.push_back(encode_molecule(smi, features));
    } catch (const Error&) {
      ++failed;
    }
  }
  if (graphs.empty()) throw Error(ErrorCode::NoValidRows, "no parseable molecules in " + input.string());
  std::vector<GraphTensor> train, held;
  if (holdout > 0.0) {
    const auto parts = split(graphs.size(), {1.0 - holdout, holdout}, pcfg.seed);
    for (std::size_t i : parts[0]) train.push_back(graphs[i]);
    for (std::size_t i : parts[1]) held.push_back(graphs[i]);
  } else {
    train = graphs;
  }
  run.out() << "pretraining on " << train.size() << " molecules (" << failed << " unparseable, " << held.size()
            << " held out)\n";

  const GnnModel model(mcfg);
  const PretrainResult result = masked_graph_pretrain(model, train, pcfg, [&](const PretrainEpoch& e) {
    run.out() << "epoch " << e.epoch << " loss " << format_number(e.loss) << " masked_accuracy "
              << format_number(e.accuracy) << "\n";
  });

  json manifest;
  manifest["format"] = "molgnn-pretrained";
  manifest["model"] = mcfg.to_json();
  manifest["buffers"] = json::array();
  ParameterMap blobs = result.core;
  for (const auto& [name, value] : result.buffers) {
    blobs[name] = value;
    manifest["buffers"].push_back(name);
  }
  save_parameters(output, blobs, manifest);
  run.output(output);
  run.extra()["final_loss"] = result.history.empty() ? 0.0 : result.history.back().loss;
  if (!held.empty()) {
    const MaskedAccuracy acc = masked_accuracy(model, result, held, pcfg.mask_rate, pcfg.seed);
    run.extra()["holdout_accuracy"] = acc.accuracy;
    run.extra()["holdout_majority_rate"] = acc.majority_rate;
    run.extra()["holdout_masked"] = acc.masked;
    run.out() << "held-out masked accuracy " << format_number(acc.accuracy) << " (majority "
              << format_number(acc.majority_rate) << ", " << acc.masked << " atoms)\n";
  }
  run.write_manifest(manifest_path(s, output));
}

std::vector<Key> rtfilter_schema() {
  return {
      {"residuals", ValueKind::String, "", "CSV with a residual column or experimental_rt and predicted_rt"},
      {"bounds", ValueKind::Reals, json::array(), "lower,upper bounds instead of residual calibration"},
      {"z", ValueKind::Real, kDefaultRtZ, "bound width in standard deviations"},
      {"candidates", ValueKind::String, "", "candidate CSV"},
      {"checkpoint", ValueKind::String, "", "RT model used to predict candidate retention times"},
      {"output", ValueKind::String, "", "verdict CSV to write"},
      manifest_key(),
  };
}

std::vector<double> read_residuals(const fs::path& path) {
  const CsvTable csv = read_csv(path.string());
  const int residual = csv.column("residual");
  const int exp = csv.column("experimental_rt"), pred = csv.column("predicted_rt");
  if (residual < 0 && (exp < 0 || pred < 0))
    throw Error(ErrorCode::MissingColumn, path.string() + " needs a residual column or experimental_rt and predicted_rt");
  auto number = [&](const std::vector<std::string>& row, int at, std::size_t line) {
    const std::string cell = static_cast<std::size_t>(at) < row.size() ? row[static_cast<std::size_t>(at)] : "";
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used == cell.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ConfigError, path.string() + " row " + std::to_string(line) + " is not numeric");
  };
  std::vector<double> out;
  for (std::size_t r = 0; r < csv.rows.size(); ++r)
    out.push_back(residual >= 0 ? number(csv.rows[r], residual, r + 1)
                                : number(csv.rows[r], exp, r + 1) - number(csv.rows[r], pred, r + 1));
  return out;
}

void rtfilter_command(const Settings& s, Run& run) {
  const fs::path candidates_path = s.required_text("candidates"), output = s.required_text("output");
  const auto bounds = s.reals("bounds");
  const std::string residuals_path = s.text("residuals"), checkpoint = s.text("checkpoint");
  if (!bounds.empty() && bounds.size() != 2) config_error("bounds needs exactly two values");
  if (bounds.empty() == residuals_path.empty()) config_error("give exactly one of --residuals or --bounds");
  if (!(s.real("z") > 0.0)) config_error("z must be positive");
  require_file(candidates_path);
  if (!residuals_path.empty()) require_file(residuals_path);
  if (!checkpoint.empty()) require_file(checkpoint);
  const RtCalibration preset = bounds.empty() ? RtCalibration{} : calibration_from_bounds(bounds[0], bounds[1]);
  if (checkpoint.empty() && read_csv(candidates_path.string()).column("predicted_rt") < 0)
    config_error("candidates lack predicted_rt and no --checkpoint was given");
  run.begin();
  run.input(candidates_path);

  const RtCalibration cal = bounds.empty() ? calibrate(read_residuals(residuals_path), s.real("z")) : preset;
  if (!residuals_path.empty()) run.input(residuals_path);
  auto analytes = read_candidates(candidates_path);
  if (!checkpoint.empty()) {
    run.input(checkpoint);
    const GnnModel model = load_checkpoint(checkpoint);
    for (auto& a : analytes)
      for (auto& c : a.candidates) c.predicted_rt = model.predict(encode_molecule(c.smiles, model.config().features))(0, 0);
  }
  std::vector<AnalyteVerdicts> verdicts;
  for (const auto& a : analytes) verdicts.push_back({a.id, a.rt, apply_filter(cal, a.rt, a.candidates)});
  write_verdicts_csv(output, verdicts);
  run.output(output);

  const FilterReport report = filter_report(verdicts);
  run.extra()["calibration"] = {{"mu", cal.mu}, {"sigma", cal.sigma}, {"z", cal.z}, {"lower", cal.lower}, {"upper", cal.upper}};
  run.extra()["candidates"] = report.total;
  run.extra()["filtered"] = report.filtered;
  run.extra()["filtered_fraction"] = report.filtered_fraction;
  run.extra()["false_negatives"] = report.false_negatives;
  run.out() << "bounds [" << format_number(cal.lower) << ", " << format_number(cal.upper) << "]: filtered "
            << report.filtered << " of " << report.total << " candidates\n";
  for (const auto& id : report.false_negatives) run.out() << "  analyte " << id << ": true identity filtered out\n";
  run.write_manifest(manifest_path(s, output));
}

struct Command {
  const char* name;
  const char* description;
  std::vector<Key> (*schema)();
  void (*body)(const Settings&, Run&);
};

const std::vector<Command>& commands() {
  static const std::vector<Command> all = {
      {"encode", "Encode a SMILES table into a record file", encode_schema, encode_command},
      {"train", "Train a model and write a checkpoint", train_schema, train_command},
      {"evaluate", "Score a checkpoint on a labeled dataset", evaluate_schema, evaluate_command},
      {"predict", "Predict properties for a SMILES list", predict_schema, predict_command},
      {"explain", "Write per-atom attributions as CSV and SVG", explain_schema, explain_command},
      {"pretrain", "Masked-atom pretraining on unlabeled SMILES", pretrain_schema, pretrain_command},
      {"rtfilter", "Filter candidate structures by retention time", rtfilter_schema, rtfilter_command},
  };
  return all;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Molecular graph neural network toolkit", "molgnn"};
  app.set_version_flag("--version", std::string("molgnn ") + kToolkitVersion + " (record format MGRF v1, checkpoint format MGCK v1)");
  app.require_subcommand(1);

  struct Parsed {
    const Command* command = nullptr;
    std::string config;
    std::vector<std::pair<std::string, std::string>> flags;
  } parsed;

  for (const auto& command : commands()) {
    CLI::App* sub = app.add_subcommand(command.name, command.description);
    sub->add_option("--config", parsed.config, "JSON config file");
    for (const auto& key : command.schema()) {
      const std::string name = key.name;
      sub->add_option_function<std::string>(
          "--" + name, [&parsed, name](const std::string& v) { parsed.flags.emplace_back(name, v); }, key.help)
          ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    sub->callback([&parsed, &command] { parsed.command = &command; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }
  if (!parsed.command) return 2;

  Settings settings(parsed.command->schema());
  Run run(parsed.command->name, settings, out);
  try {
    if (!parsed.config.empty()) settings.merge_file(parsed.config);
    for (const auto& [name, text] : parsed.flags) settings.set_from_text(name, text);
    parsed.command->body(settings, run);
  } catch (const Error& e) {
    json doc = {{"error", std::string(to_string(e.code()))}, {"message", e.what()}, {"command", parsed.command->name}};
    err << doc.dump() << "\n";
    return run.started() ? 1 : 2;
  } catch (const std::exception& e) {
    json doc = {{"error", "Unexpected"}, {"message", e.what()}, {"command", parsed.command->name}};
    err << doc.dump() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace molgnn::cli
