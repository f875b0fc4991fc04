#include "molgnn/model.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "molgnn/binary_io.hpp"
#include "molgnn/random.hpp"

namespace molgnn {
namespace {

constexpr char kCheckpointMagic[4] = {'M', 'G', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;
const std::string kBufferPrefix = "buffer:";

Matrix initial_value(const ParamShape& shape, Rng& rng) {
  switch (shape.init) {
    case InitKind::Zeros: return Matrix::Zero(shape.rows, shape.cols);
    case InitKind::Ones: return Matrix::Ones(shape.rows, shape.cols);
    case InitKind::Glorot: break;
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
  Matrix m(shape.rows, shape.cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-limit, limit);
  return m;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  if (outputs < 1) throw Error(ErrorCode::InvalidModel, "outputs must be >= 1");
  std::size_t readouts = 0;
  bool after_readout = false;
  for (const auto& layer : layers) {
    if (layer.kind == LayerKind::Readout) {
      ++readouts;
      after_readout = true;
    } else if (is_graph_layer(layer.kind) && after_readout) {
      throw Error(ErrorCode::InvalidModel, "graph layer after readout");
    } else if (layer.kind == LayerKind::Dense && !after_readout) {
      throw Error(ErrorCode::InvalidModel, "dense layer before readout");
    }
    if (layer.kind != LayerKind::Readout && layer.units < 1)
      throw Error(ErrorCode::InvalidModel, to_string(layer.kind) + " layer needs positive units");
    if (layer.heads < 1) throw Error(ErrorCode::InvalidModel, "heads must be >= 1");
    if ((layer.kind == LayerKind::Gat || layer.kind == LayerKind::GatE) &&
        layer.head_merge == HeadMerge::Concat && layer.units % layer.heads != 0)
      throw Error(ErrorCode::InvalidModel, "attention units must be divisible by heads");
    if (uses_edge_features(layer.kind) && (!features.include_edge_features || features.bond_features.empty()))
      throw Error(ErrorCode::InvalidModel, to_string(layer.kind) + " needs edge features in the feature config");
  }
  if (readouts != 1) throw Error(ErrorCode::InvalidModel, "model needs exactly one readout layer");
  if (layers.back().kind != LayerKind::Dense || layers.back().units != outputs)
    throw Error(ErrorCode::InvalidModel, "last layer must be dense with `outputs` units");
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json doc;
  doc["features"] = features.to_json();
  doc["layers"] = nlohmann::json::array();
  for (const auto& layer : layers) doc["layers"].push_back(layer.to_json());
  doc["task"] = task == TaskKind::Regression ? "regression" : "binary";
  doc["outputs"] = outputs;
  doc["seed"] = seed;
  return doc;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
  static const std::set<std::string> known = {"features", "layers", "task", "outputs", "seed"};
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "model config must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown model key '" + key + "'");
  }
  ModelConfig cfg;
  try {
    cfg.features = doc.contains("features") ? FeatureConfig::from_json(doc["features"]) : FeatureConfig::standard();
    for (const auto& layer : doc.at("layers")) cfg.layers.push_back(LayerConfig::from_json(layer));
    const std::string task = doc.value("task", std::string("regression"));
    if (task != "regression" && task != "binary") throw Error(ErrorCode::ConfigError, "unknown task '" + task + "'");
    cfg.task = task == "regression" ? TaskKind::Regression : TaskKind::Binary;
    cfg.outputs = doc.value("outputs", 1);
    cfg.seed = doc.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed model config: ") + e.what());
  }
  return cfg;
}

ModelConfig standard_model(const FeatureConfig& features, LayerKind kind, int depth, int units,
                           TaskKind task, int outputs, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.features = features;
  for (int k = 0; k < depth; ++k) {
    LayerConfig layer = LayerConfig::graph(kind, units);
    if (kind == LayerKind::Gat || kind == LayerKind::GatE) layer.heads = units % 4 == 0 ? 4 : 1;
    cfg.layers.push_back(layer);
  }
  cfg.layers.push_back(LayerConfig::readout_layer(Aggregation::Sum));
  cfg.layers.push_back(LayerConfig::dense(units, Activation::Relu));
  cfg.layers.push_back(LayerConfig::dense(outputs, Activation::Identity));
  cfg.task = task;
  cfg.outputs = outputs;
  cfg.seed = seed;
  return cfg;
}

// ---------------------------------------------------------------- model

GnnModel::GnnModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng = substream(config_.seed, "init");
  const Index edge_width = config_.features.include_edge_features ? config_.features.bond_width() : 0;
  Index width = config_.features.atom_width();
  for (std::size_t k = 0; k < config_.layers.size(); ++k) {
    const auto& layer = config_.layers[k];
    in_widths_.push_back(width);
    for (const auto& shape : layer_parameters(layer, width, edge_width, layer_prefix(k)))
      params_[shape.name] = initial_value(shape, rng);
    for (const auto& shape : layer_buffers(layer, width, layer_prefix(k)))
      buffers_[shape.name] = initial_value(shape, rng);
    width = layer_output_width(layer, width);
  }
}

int GnnModel::num_graph_layers() const {
  int n = 0;
  for (const auto& layer : config_.layers) n += is_graph_layer(layer.kind) ? 1 : 0;
  return n;
}

void GnnModel::check_layout(const GraphTensor& g) const {
  const auto& f = config_.features;
  if (g.node_feature.cols() != f.atom_width())
    throw Error(ErrorCode::LayoutMismatch, "node feature width " + std::to_string(g.node_feature.cols()) +
                                               " but the model expects " + std::to_string(f.atom_width()));
  const bool wants_edges = f.include_edge_features && f.bond_width() > 0;
  if (wants_edges && g.edge_feature && g.edge_feature->cols() != f.bond_width())
    throw Error(ErrorCode::LayoutMismatch, "edge feature width " + std::to_string(g.edge_feature->cols()) +
                                               " but the model expects " + std::to_string(f.bond_width()));
}

Var GnnModel::forward_graph_layers(const GraphContext& ctx, Var h, const ParamSource& params,
                                   const LayerMode& mode, std::vector<Var>* embeddings) const {
  for (std::size_t k = 0; k < config_.layers.size(); ++k) {
    const auto& layer = config_.layers[k];
    if (!is_graph_layer(layer.kind)) break;
    h = layer_forward(layer, layer_prefix(k), ctx, h, params, mode);
    if (embeddings) embeddings->push_back(h);
  }
  return h;
}

ForwardResult GnnModel::forward_with(Tape& tape, const GraphTensor& g, const ParamSource& params,
                                     bool training, bool input_gradient) const {
  check_layout(g);
  ForwardResult result;
  GraphContext ctx(tape, g);
  LayerMode mode;
  mode.training = training;
  mode.buffers = &buffers_;
  mode.observed = &result.batch_stats;

  result.input = input_gradient ? tape.input(g.node_feature) : tape.constant(g.node_feature);
  Var h = forward_graph_layers(ctx, result.input, params, mode, &result.node_embeddings);
  for (std::size_t k = result.node_embeddings.size(); k < config_.layers.size(); ++k) {
    h = layer_forward(config_.layers[k], layer_prefix(k), ctx, h, params, mode);
    if (config_.layers[k].kind == LayerKind::Readout) result.readout = h;
  }
  result.output = h;
  return result;
}

ForwardResult GnnModel::forward(Tape& tape, const GraphTensor& g, bool training, bool input_gradient) const {
  const ParamSource bind = [this, &tape](const std::string& name) {
    const auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::InvalidModel, "missing parameter '" + name + "'");
    return tape.parameter(name, it->second);
  };
  return forward_with(tape, g, bind, training, input_gradient);
}

Matrix GnnModel::predict(const GraphTensor& g) const {
  Tape tape;
  return forward(tape, g, false, false).output.value();
}

void GnnModel::update_running_stats(const std::map<std::string, BatchStats>& observed) {
  for (const auto& [prefix, stats] : observed) {
    Matrix& mean = buffers_.at(prefix + ".mean");
    Matrix& var = buffers_.at(prefix + ".var");
    mean = kBatchNormMomentum * mean + (1.0 - kBatchNormMomentum) * stats.mean;
    var = kBatchNormMomentum * var + (1.0 - kBatchNormMomentum) * stats.variance;
  }
}

// ---------------------------------------------------------------- checkpoints

void save_parameters(const std::filesystem::path& path, const ParameterMap& params,
                     const nlohmann::json& manifest) {
  std::string bytes(kCheckpointMagic, 4);
  bin::put_u16(bytes, kCheckpointVersion);
  const std::string text = manifest.dump();
  bin::put_u64(bytes, text.size());
  bytes += text;
  bin::put_u32(bytes, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, value] : params) {
    bin::put_u16(bytes, static_cast<std::uint16_t>(name.size()));
    bytes += name;
    bin::put_u32(bytes, static_cast<std::uint32_t>(value.rows()));
    bin::put_u32(bytes, static_cast<std::uint32_t>(value.cols()));
    for (Index k = 0; k < value.size(); ++k) bin::put_f64(bytes, value.data()[k]);
  }
  write_file(path, bytes);
}

ParameterMap load_parameters(const std::filesystem::path& path, nlohmann::json* manifest) {
  const std::string bytes = read_file(path);
  bin::Cursor in(bytes.data(), bytes.size());
  const char* magic = in.take(4);
  if (!magic || std::string(magic, 4) != std::string(kCheckpointMagic, 4))
    throw Error(ErrorCode::CorruptFile, path.string() + " is not a checkpoint");
  const auto version = in.uint<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::CorruptFile, "unsupported checkpoint version " + std::to_string(version));
  const auto text_size = in.uint<std::uint64_t>();
  const char* text = in.take(text_size);
  if (!text) throw Error(ErrorCode::CorruptFile, "truncated checkpoint manifest");
  if (manifest) {
    try {
      *manifest = nlohmann::json::parse(std::string(text, text_size));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::CorruptFile, std::string("bad checkpoint manifest: ") + e.what());
    }
  }
  ParameterMap params;
  const auto count = in.uint<std::uint32_t>();
  for (std::uint32_t k = 0; k < count && in.ok(); ++k) {
    const auto name_size = in.uint<std::uint16_t>();
    const char* name = in.take(name_size);
    const auto rows = in.uint<std::uint32_t>();
    const auto cols = in.uint<std::uint32_t>();
    if (!in.ok() || static_cast<std::uint64_t>(rows) * cols * 8 > in.remaining()) break;
    Matrix value(rows, cols);
    for (Index i = 0; i < value.size(); ++i) value.data()[i] = in.f64();
    params.emplace(std::string(name, name_size), std::move(value));
  }
  if (!in.ok() || params.size() != count) throw Error(ErrorCode::CorruptFile, "truncated checkpoint blobs");
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const GnnModel& model, const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["format"] = "molgnn-checkpoint";
  manifest["model"] = model.config().to_json();
  manifest["extra"] = extra;
  ParameterMap blobs = model.parameters();
  for (const auto& [name, value] : model.buffers()) blobs.emplace(kBufferPrefix + name, value);
  save_parameters(path, blobs, manifest);
}

GnnModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra) {
  nlohmann::json manifest;
  ParameterMap blobs = load_parameters(path, &manifest);
  if (manifest.value("format", std::string()) != "molgnn-checkpoint")
    throw Error(ErrorCode::CorruptFile, path.string() + " holds parameters, not a model checkpoint");
  GnnModel model(ModelConfig::from_json(manifest.at("model")));
  for (auto& [name, value] : blobs) {
    const bool buffer = name.starts_with(kBufferPrefix);
    ParameterMap& target = buffer ? model.buffers() : model.parameters();
    const std::string key = buffer ? name.substr(kBufferPrefix.size()) : name;
    const auto it = target.find(key);
    if (it == target.end() || it->second.rows() != value.rows() || it->second.cols() != value.cols())
      throw Error(ErrorCode::CorruptFile, "checkpoint blob '" + name + "' does not fit the model");
    it->second = std::move(value);
  }
  if (blobs.size() != model.parameters().size() + model.buffers().size())
    throw Error(ErrorCode::CorruptFile, "checkpoint is missing parameters");
  if (extra) *extra = manifest.value("extra", nlohmann::json::object());
  return model;
}

}  // namespace molgnn
