#include "molgnn/layers.hpp"

#include <cmath>
#include <set>

namespace molgnn {
namespace {

const std::map<std::string, LayerKind>& kind_names() {
  static const std::map<std::string, LayerKind> names = {
      {"gcn", LayerKind::Gcn},       {"gin", LayerKind::Gin},     {"gat", LayerKind::Gat},
      {"gat_e", LayerKind::GatE},    {"mpnn_e", LayerKind::MpnnE}, {"dense", LayerKind::Dense},
      {"readout", LayerKind::Readout},
  };
  return names;
}

const std::map<std::string, Activation>& activation_names() {
  static const std::map<std::string, Activation> names = {
      {"identity", Activation::Identity}, {"relu", Activation::Relu},
      {"leaky_relu", Activation::LeakyRelu}, {"sigmoid", Activation::Sigmoid},
      {"tanh", Activation::Tanh},         {"softplus", Activation::Softplus},
  };
  return names;
}

std::string aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::Sum: return "sum";
    case Aggregation::Mean: return "mean";
    case Aggregation::Max: return "max";
  }
  return "sum";
}

Aggregation aggregation_from_name(const std::string& name) {
  if (name == "sum") return Aggregation::Sum;
  if (name == "mean") return Aggregation::Mean;
  if (name == "max") return Aggregation::Max;
  throw Error(ErrorCode::ConfigError, "unknown readout mode '" + name + "'");
}

int per_head_width(const LayerConfig& cfg) {
  return cfg.head_merge == HeadMerge::Concat ? cfg.units / cfg.heads : cfg.units;
}

Var affine(Var x, const ParamSource& params, const std::string& name) {
  return add(matmul(x, params(name + ".W")), params(name + ".b"));
}

Var gcn_core(const std::string& p, const GraphContext& ctx, Var h, const ParamSource& params) {
  const Var projected = matmul(h, params(p + "W"));
  const Var messages = scale_rows(gather_rows(projected, ctx.looped_src()), ctx.gcn_coefficients());
  return add(segment_sum(messages, ctx.looped_dst(), ctx.num_nodes()), params(p + "b"));
}

Var gin_core(const LayerConfig& cfg, const std::string& p, const GraphContext& ctx, Var h,
             const ParamSource& params) {
  const auto& g = ctx.graph();
  Var neighbours = gather_rows(h, g.edge_src);
  if (auto w = ctx.edge_weight()) neighbours = scale_rows(neighbours, *w);
  const Var aggregate = segment_sum(neighbours, g.edge_dst, ctx.num_nodes());
  Tape& tape = *h.tape;
  const Var one_plus_eps = add(params(p + "eps"), tape.constant(Matrix::Ones(1, 1)));
  const Var combined = add(scale_by(h, one_plus_eps), aggregate);
  const Var hidden = apply_activation(cfg.activation, affine(combined, params, p + "mlp0"));
  return affine(hidden, params, p + "mlp1");
}

Var attention_scores(Var wh, const std::string& hp, const GraphContext& ctx, const ParamSource& params,
                     bool with_edges) {
  const auto& src = ctx.looped_src();
  const auto& dst = ctx.looped_dst();
  Var score = add(gather_rows(matmul(wh, params(hp + "a_dst")), dst),
                  gather_rows(matmul(wh, params(hp + "a_src")), src));
  if (with_edges) {
    const Var edge_proj = matmul(*ctx.looped_edge_feature(), params(hp + "W_edge"));
    score = add(score, matmul(edge_proj, params(hp + "a_edge")));
  }
  return segment_softmax(leaky_relu(score, 0.2), dst, ctx.num_nodes());
}

Var gat_core(const LayerConfig& cfg, const std::string& p, const GraphContext& ctx, Var h,
             const ParamSource& params) {
  const bool with_edges = cfg.kind == LayerKind::GatE;
  const auto& src = ctx.looped_src();
  const auto& dst = ctx.looped_dst();
  std::vector<Var> heads;
  for (int k = 0; k < cfg.heads; ++k) {
    const std::string hp = p + "head" + std::to_string(k) + ".";
    const Var wh = matmul(h, params(hp + "W"));
    const Var alpha = attention_scores(wh, hp, ctx, params, with_edges);
    heads.push_back(segment_sum(scale_rows(gather_rows(wh, src), alpha), dst, ctx.num_nodes()));
  }
  Var merged = heads.front();
  if (heads.size() > 1) {
    if (cfg.head_merge == HeadMerge::Concat) {
      merged = concat(heads);
    } else {
      for (std::size_t k = 1; k < heads.size(); ++k) merged = add(merged, heads[k]);
      merged = scale(merged, 1.0 / static_cast<double>(heads.size()));
    }
  }
  return add(merged, params(p + "b"));
}

Var mpnn_core(const std::string& p, const GraphContext& ctx, Var h, const ParamSource& params,
              Activation act) {
  const auto& g = ctx.graph();
  const Var message_in = concat({gather_rows(h, g.edge_dst), gather_rows(h, g.edge_src), *ctx.edge_feature()});
  Var messages = apply_activation(act, affine(message_in, params, p + "message"));
  if (auto w = ctx.edge_weight()) messages = scale_rows(messages, *w);
  const Var aggregate = segment_sum(messages, g.edge_dst, ctx.num_nodes());
  return affine(concat({h, aggregate}), params, p + "update");
}

Var readout_forward(const LayerConfig& cfg, const GraphContext& ctx, Var h) {
  const auto& g = ctx.graph();
  const Index graphs = g.num_graphs();
  switch (cfg.readout) {
    case Aggregation::Sum:
      return segment_sum(h, ctx.graph_index(), graphs);
    case Aggregation::Mean: {
      Matrix inv(graphs, 1);
      for (Index k = 0; k < graphs; ++k) inv(k, 0) = 1.0 / std::max(1, g.sizes[k]);
      return scale_rows(segment_sum(h, ctx.graph_index(), graphs), h.tape->constant(inv));
    }
    case Aggregation::Max:
      return segment_max(h, ctx.graph_index(), graphs);
  }
  return h;
}

}  // namespace

Var attention_coefficients(const LayerConfig& cfg, const std::string& prefix, const GraphContext& ctx, Var h,
                           const ParamSource& params, int head) {
  if (cfg.kind == LayerKind::GatE && !ctx.edge_feature())
    throw Error(ErrorCode::MissingEdgeFeature, "gat_e layer needs edge features");
  const std::string hp = prefix + "head" + std::to_string(head) + ".";
  return attention_scores(matmul(h, params(hp + "W")), hp, ctx, params, cfg.kind == LayerKind::GatE);
}

std::string to_string(LayerKind kind) {
  for (const auto& [name, k] : kind_names())
    if (k == kind) return name;
  return "unknown";
}

std::string to_string(Activation act) {
  for (const auto& [name, a] : activation_names())
    if (a == act) return name;
  return "unknown";
}

LayerKind layer_kind_from_name(const std::string& name) {
  const auto it = kind_names().find(name);
  if (it == kind_names().end()) throw Error(ErrorCode::ConfigError, "unknown layer kind '" + name + "'");
  return it->second;
}

Activation activation_from_name(const std::string& name) {
  const auto it = activation_names().find(name);
  if (it == activation_names().end()) throw Error(ErrorCode::ConfigError, "unknown activation '" + name + "'");
  return it->second;
}

bool is_graph_layer(LayerKind kind) {
  return kind != LayerKind::Dense && kind != LayerKind::Readout;
}

bool uses_edge_features(LayerKind kind) { return kind == LayerKind::GatE || kind == LayerKind::MpnnE; }

LayerConfig LayerConfig::graph(LayerKind kind, int units, Activation act) {
  LayerConfig cfg;
  cfg.kind = kind;
  cfg.units = units;
  cfg.activation = act;
  return cfg;
}

LayerConfig LayerConfig::dense(int units, Activation act) {
  LayerConfig cfg;
  cfg.kind = LayerKind::Dense;
  cfg.units = units;
  cfg.activation = act;
  cfg.residual = false;
  return cfg;
}

LayerConfig LayerConfig::readout_layer(Aggregation mode) {
  LayerConfig cfg;
  cfg.kind = LayerKind::Readout;
  cfg.activation = Activation::Identity;
  cfg.residual = false;
  cfg.readout = mode;
  return cfg;
}

nlohmann::json LayerConfig::to_json() const {
  nlohmann::json doc;
  doc["kind"] = to_string(kind);
  doc["units"] = units;
  doc["activation"] = to_string(activation);
  doc["heads"] = heads;
  doc["residual"] = residual;
  doc["normalization"] = normalization == Normalization::Batch ? "batch" : "none";
  doc["head_merge"] = head_merge == HeadMerge::Concat ? "concat" : "mean";
  doc["readout"] = aggregation_name(readout);
  return doc;
}

LayerConfig LayerConfig::from_json(const nlohmann::json& doc) {
  static const std::set<std::string> known = {"kind", "units", "activation", "heads", "residual",
                                              "normalization", "head_merge", "readout"};
  if (!doc.is_object()) throw Error(ErrorCode::ConfigError, "layer entry must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown layer key '" + key + "'");
  }
  try {
    const LayerKind kind = layer_kind_from_name(doc.at("kind").get<std::string>());
    LayerConfig cfg = kind == LayerKind::Readout ? readout_layer()
                      : kind == LayerKind::Dense ? dense(0)
                                                 : graph(kind, 0);
    cfg.units = doc.value("units", 0);
    if (doc.contains("activation")) cfg.activation = activation_from_name(doc["activation"].get<std::string>());
    cfg.heads = doc.value("heads", 1);
    cfg.residual = doc.value("residual", cfg.residual);
    const std::string norm = doc.value("normalization", std::string("none"));
    if (norm != "none" && norm != "batch") throw Error(ErrorCode::ConfigError, "unknown normalization '" + norm + "'");
    cfg.normalization = norm == "batch" ? Normalization::Batch : Normalization::None;
    const std::string merge = doc.value("head_merge", std::string("concat"));
    if (merge != "concat" && merge != "mean") throw Error(ErrorCode::ConfigError, "unknown head_merge '" + merge + "'");
    cfg.head_merge = merge == "concat" ? HeadMerge::Concat : HeadMerge::Mean;
    cfg.readout = aggregation_from_name(doc.value("readout", std::string("sum")));
    if (cfg.kind != LayerKind::Readout && cfg.units <= 0)
      throw Error(ErrorCode::ConfigError, to_string(kind) + " layer needs positive units");
    if (cfg.heads < 1) throw Error(ErrorCode::ConfigError, "heads must be >= 1");
    if ((kind == LayerKind::Gat || kind == LayerKind::GatE) && cfg.head_merge == HeadMerge::Concat &&
        cfg.units % cfg.heads != 0)
      throw Error(ErrorCode::ConfigError, "units must be divisible by heads");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("malformed layer entry: ") + e.what());
  }
}

Var apply_activation(Activation act, Var x) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::LeakyRelu: return leaky_relu(x, 0.2);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh(x);
    case Activation::Softplus: return softplus(x);
  }
  return x;
}

Index layer_output_width(const LayerConfig& cfg, Index in_width) {
  return cfg.kind == LayerKind::Readout ? in_width : cfg.units;
}

std::vector<ParamShape> layer_parameters(const LayerConfig& cfg, Index in, Index edge_width,
                                         const std::string& p) {
  std::vector<ParamShape> out;
  const Index units = cfg.units;
  switch (cfg.kind) {
    case LayerKind::Readout:
      return out;
    case LayerKind::Gcn:
    case LayerKind::Dense:
      out.push_back({p + "W", in, units});
      out.push_back({p + "b", 1, units, InitKind::Zeros});
      break;
    case LayerKind::Gin:
      out.push_back({p + "eps", 1, 1, InitKind::Zeros});
      out.push_back({p + "mlp0.W", in, units});
      out.push_back({p + "mlp0.b", 1, units, InitKind::Zeros});
      out.push_back({p + "mlp1.W", units, units});
      out.push_back({p + "mlp1.b", 1, units, InitKind::Zeros});
      break;
    case LayerKind::Gat:
    case LayerKind::GatE: {
      const Index f = per_head_width(cfg);
      for (int k = 0; k < cfg.heads; ++k) {
        const std::string hp = p + "head" + std::to_string(k) + ".";
        out.push_back({hp + "W", in, f});
        out.push_back({hp + "a_src", f, 1});
        out.push_back({hp + "a_dst", f, 1});
        if (cfg.kind == LayerKind::GatE) {
          out.push_back({hp + "W_edge", edge_width, f});
          out.push_back({hp + "a_edge", f, 1});
        }
      }
      out.push_back({p + "b", 1, units, InitKind::Zeros});
      break;
    }
    case LayerKind::MpnnE:
      out.push_back({p + "message.W", 2 * in + edge_width, units});
      out.push_back({p + "message.b", 1, units, InitKind::Zeros});
      out.push_back({p + "update.W", in + units, units});
      out.push_back({p + "update.b", 1, units, InitKind::Zeros});
      break;
  }
  if (cfg.normalization == Normalization::Batch) {
    out.push_back({p + "bn.gamma", 1, units, InitKind::Ones});
    out.push_back({p + "bn.beta", 1, units, InitKind::Zeros});
  }
  if (cfg.residual && in != units) out.push_back({p + "residual.W", in, units});
  return out;
}

std::vector<ParamShape> layer_buffers(const LayerConfig& cfg, Index, const std::string& p) {
  if (cfg.normalization != Normalization::Batch || cfg.kind == LayerKind::Readout) return {};
  return {{p + "bn.mean", 1, cfg.units, InitKind::Zeros}, {p + "bn.var", 1, cfg.units, InitKind::Ones}};
}

GraphContext::GraphContext(Tape& tape, const GraphTensor& g) : g_(&g) {
  const Index n = g.num_nodes();
  if (g.edge_feature) edge_feature_ = tape.constant(*g.edge_feature);
  if (g.edge_weight) edge_weight_ = tape.constant(Matrix(*g.edge_weight));
  graph_index_ = g.graph_index();

  std::vector<double> weight;
  std::vector<Index> kept;
  Vector degree = Vector::Zero(n);
  for (Index e = 0; e < g.num_edges(); ++e) {
    if (g.edge_src[e] == g.edge_dst[e]) continue;
    const double w = g.edge_weight ? (*g.edge_weight)(e) : 1.0;
    kept.push_back(e);
    looped_src_.push_back(g.edge_src[e]);
    looped_dst_.push_back(g.edge_dst[e]);
    weight.push_back(w);
    degree(g.edge_dst[e]) += w;
  }
  for (Index i = 0; i < n; ++i) {
    looped_src_.push_back(static_cast<int>(i));
    looped_dst_.push_back(static_cast<int>(i));
    weight.push_back(1.0);
  }
  Matrix coeff(static_cast<Index>(weight.size()), 1);
  for (Index e = 0; e < coeff.rows(); ++e) {
    const double di = degree(looped_dst_[e]) + 1.0;
    const double dj = degree(looped_src_[e]) + 1.0;
    coeff(e, 0) = weight[e] / std::sqrt(di * dj);
  }
  gcn_coefficients_ = tape.constant(std::move(coeff));
  if (g.edge_feature) {
    Matrix ef = Matrix::Zero(static_cast<Index>(weight.size()), g.edge_feature->cols());
    for (std::size_t k = 0; k < kept.size(); ++k) ef.row(static_cast<Index>(k)) = g.edge_feature->row(kept[k]);
    looped_edge_feature_ = tape.constant(std::move(ef));
  }
}

Var layer_forward(const LayerConfig& cfg, const std::string& p, const GraphContext& ctx, Var h,
                  const ParamSource& params, const LayerMode& mode) {
  if (cfg.kind == LayerKind::Readout) return readout_forward(cfg, ctx, h);
  if (uses_edge_features(cfg.kind) && !ctx.edge_feature())
    throw Error(ErrorCode::MissingEdgeFeature, to_string(cfg.kind) + " layer needs edge features");

  Var z;
  try {
    switch (cfg.kind) {
      case LayerKind::Gcn: z = gcn_core(p, ctx, h, params); break;
      case LayerKind::Gin: z = gin_core(cfg, p, ctx, h, params); break;
      case LayerKind::Gat:
      case LayerKind::GatE: z = gat_core(cfg, p, ctx, h, params); break;
      case LayerKind::MpnnE: z = mpnn_core(p, ctx, h, params, cfg.activation); break;
      case LayerKind::Dense: z = affine(h, params, p.substr(0, p.size() - 1)); break;
      case LayerKind::Readout: break;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ShapeMismatch) throw;
    throw Error(ErrorCode::WidthMismatch, to_string(cfg.kind) + " layer '" + p + "' got input width " +
                                              std::to_string(h.cols()));
  }

  if (cfg.normalization == Normalization::Batch) {
    const Var gamma = params(p + "bn.gamma");
    const Var beta = params(p + "bn.beta");
    if (mode.training) {
      BatchStats stats;
      z = batch_norm_train(z, gamma, beta, kBatchNormEps, &stats);
      if (mode.observed) (*mode.observed)[p + "bn"] = stats;
    } else {
      if (!mode.buffers) throw Error(ErrorCode::InvalidModel, "batch normalization needs running statistics");
      const BatchStats stats{mode.buffers->at(p + "bn.mean"), mode.buffers->at(p + "bn.var")};
      z = batch_norm_eval(z, gamma, beta, stats, kBatchNormEps);
    }
  }
  Var out = apply_activation(cfg.activation, z);
  if (cfg.residual) {
    const Var skip = h.cols() == cfg.units ? h : matmul(h, params(p + "residual.W"));
    out = add(out, skip);
  }
  return out;
}

}  // namespace molgnn
