#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "molgnn/autodiff.hpp"
#include "molgnn/featurize.hpp"
#include "molgnn/layers.hpp"

namespace molgnn {

enum class TaskKind { Regression, Binary };

struct ModelConfig {
  FeatureConfig features;
  std::vector<LayerConfig> layers;
  TaskKind task = TaskKind::Regression;
  int outputs = 1;
  std::uint64_t seed = 0;

  /// Graph layers, then exactly one readout, then dense layers ending at `outputs`.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
  bool operator==(const ModelConfig&) const = default;
};

/// The usual stack: `depth` graph layers of one kind, readout, hidden dense
/// layer, and a linear output layer.
ModelConfig standard_model(const FeatureConfig& features, LayerKind kind, int depth, int units,
                           TaskKind task = TaskKind::Regression, int outputs = 1,
                           std::uint64_t seed = 0);

struct ForwardResult {
  Var input;                         // node features
  std::vector<Var> node_embeddings;  // output of every graph layer
  Var readout;
  Var output;                        // num_graphs x outputs
  std::map<std::string, BatchStats> batch_stats;
};

class GnnModel {
 public:
  /// Validates the config and initializes parameters (Glorot-uniform,
  /// seeded from the "init" sub-stream of config.seed).
  explicit GnnModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParameterMap& parameters() { return params_; }
  const ParameterMap& parameters() const { return params_; }
  ParameterMap& buffers() { return buffers_; }
  const ParameterMap& buffers() const { return buffers_; }

  int num_graph_layers() const;
  /// Input width of every layer, in config order.
  const std::vector<Index>& layer_input_widths() const { return in_widths_; }
  static std::string layer_prefix(std::size_t index) { return "layer" + std::to_string(index) + "."; }

  /// LayoutMismatch when the graph was featurized with a different layout.
  void check_layout(const GraphTensor& g) const;

  ForwardResult forward(Tape& tape, const GraphTensor& g, bool training = false,
                        bool input_gradient = false) const;
  /// Forward with caller-supplied parameter bindings (gradient checks).
  ForwardResult forward_with(Tape& tape, const GraphTensor& g, const ParamSource& params,
                             bool training, bool input_gradient) const;
  /// Runs only the graph layers on `h` (pretraining).
  Var forward_graph_layers(const GraphContext& ctx, Var h, const ParamSource& params, const LayerMode& mode,
                           std::vector<Var>* embeddings = nullptr) const;

  /// Inference: raw values for regression, logits for classification.
  Matrix predict(const GraphTensor& g) const;

  /// Exponential moving average update of batch-norm running statistics.
  void update_running_stats(const std::map<std::string, BatchStats>& observed);

 private:
  ModelConfig config_;
  ParameterMap params_;
  ParameterMap buffers_;
  std::vector<Index> in_widths_;
};

/// Binary checkpoint: magic, JSON manifest, then named little-endian f64
/// blobs. Round-trips parameters bit-exactly.
void save_checkpoint(const std::filesystem::path& path, const GnnModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());
GnnModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

/// Parameter blobs alone (used by pretraining to export core layers).
void save_parameters(const std::filesystem::path& path, const ParameterMap& params,
                     const nlohmann::json& manifest);
ParameterMap load_parameters(const std::filesystem::path& path, nlohmann::json* manifest = nullptr);

}  // namespace molgnn
