#pragma once

#include <json.hpp>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "molgnn/autodiff.hpp"
#include "molgnn/graph_tensor.hpp"

namespace molgnn {

enum class LayerKind { Gcn, Gin, Gat, GatE, MpnnE, Dense, Readout };
enum class Activation { Identity, Relu, LeakyRelu, Sigmoid, Tanh, Softplus };
enum class Normalization { None, Batch };
enum class HeadMerge { Concat, Mean };

std::string to_string(LayerKind kind);
std::string to_string(Activation act);
LayerKind layer_kind_from_name(const std::string& name);
Activation activation_from_name(const std::string& name);

bool is_graph_layer(LayerKind kind);
bool uses_edge_features(LayerKind kind);

struct LayerConfig {
  LayerKind kind = LayerKind::Gcn;
  int units = 0;  // unused by readout
  Activation activation = Activation::Relu;
  int heads = 1;
  bool residual = true;
  Normalization normalization = Normalization::None;
  HeadMerge head_merge = HeadMerge::Concat;
  Aggregation readout = Aggregation::Sum;

  static LayerConfig graph(LayerKind kind, int units, Activation act = Activation::Relu);
  static LayerConfig dense(int units, Activation act = Activation::Relu);
  static LayerConfig readout_layer(Aggregation mode = Aggregation::Sum);

  nlohmann::json to_json() const;
  static LayerConfig from_json(const nlohmann::json& doc);
  bool operator==(const LayerConfig&) const = default;
};

Var apply_activation(Activation act, Var x);

enum class InitKind { Glorot, Zeros, Ones };

struct ParamShape {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  InitKind init = InitKind::Glorot;
};

/// Width a layer produces from `in_width` inputs.
Index layer_output_width(const LayerConfig& cfg, Index in_width);

/// Trainable tensors of one layer, names prefixed by `prefix` ("layer0.").
std::vector<ParamShape> layer_parameters(const LayerConfig& cfg, Index in_width, Index edge_width,
                                         const std::string& prefix);
/// Non-trainable running statistics (batch normalization only).
std::vector<ParamShape> layer_buffers(const LayerConfig& cfg, Index in_width, const std::string& prefix);

using ParamSource = std::function<Var(const std::string&)>;

/// Edge structure of one forward pass. The self-loop variant (used by the
/// convolutional and attentional layers) drops existing loops and adds one
/// per node carrying weight 1 and zero edge features.
class GraphContext {
 public:
  GraphContext(Tape& tape, const GraphTensor& g);

  const GraphTensor& graph() const { return *g_; }
  Index num_nodes() const { return g_->num_nodes(); }
  Index edge_width() const { return g_->edge_feature ? g_->edge_feature->cols() : 0; }

  std::optional<Var> edge_feature() const { return edge_feature_; }
  std::optional<Var> edge_weight() const { return edge_weight_; }

  const std::vector<int>& looped_src() const { return looped_src_; }
  const std::vector<int>& looped_dst() const { return looped_dst_; }
  std::optional<Var> looped_edge_feature() const { return looped_edge_feature_; }
  /// Symmetric renormalized coefficients 1/sqrt((d_i+1)(d_j+1)) times edge weight.
  Var gcn_coefficients() const { return gcn_coefficients_; }
  const std::vector<int>& graph_index() const { return graph_index_; }

 private:
  const GraphTensor* g_;
  std::optional<Var> edge_feature_;
  std::optional<Var> edge_weight_;
  std::vector<int> looped_src_;
  std::vector<int> looped_dst_;
  std::optional<Var> looped_edge_feature_;
  Var gcn_coefficients_;
  std::vector<int> graph_index_;
};

struct LayerMode {
  bool training = false;
  /// Running statistics used when not training.
  const ParameterMap* buffers = nullptr;
  /// Batch statistics observed while training, keyed by buffer prefix.
  std::map<std::string, BatchStats>* observed = nullptr;
};

/// Runs one layer. Graph layers map node embeddings to node embeddings;
/// readout maps them to one row per subgraph; dense maps rows to rows.
Var layer_forward(const LayerConfig& cfg, const std::string& prefix, const GraphContext& ctx, Var h,
                  const ParamSource& params, const LayerMode& mode);

/// Attention weights of one head over the self-loop edge list
/// (GraphContext::looped_src/looped_dst), softmax-normalized per destination.
Var attention_coefficients(const LayerConfig& cfg, const std::string& prefix, const GraphContext& ctx, Var h,
                           const ParamSource& params, int head = 0);

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.9;

}  // namespace molgnn
