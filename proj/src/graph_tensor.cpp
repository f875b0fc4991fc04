#include "molgnn/graph_tensor.hpp"

#include <numeric>
#include <string>

namespace molgnn {

std::vector<int> GraphTensor::offsets() const {
  std::vector<int> out(sizes.size() + 1, 0);
  std::partial_sum(sizes.begin(), sizes.end(), out.begin() + 1);
  return out;
}

std::vector<int> GraphTensor::graph_index() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(num_nodes()));
  for (std::size_t k = 0; k < sizes.size(); ++k) out.insert(out.end(), sizes[k], static_cast<int>(k));
  return out;
}

Field field_from_name(std::string_view name) {
  if (name == "sizes") return Field::Sizes;
  if (name == "node_feature") return Field::NodeFeature;
  if (name == "edge_src") return Field::EdgeSrc;
  if (name == "edge_dst") return Field::EdgeDst;
  if (name == "edge_feature") return Field::EdgeFeature;
  if (name == "edge_weight") return Field::EdgeWeight;
  if (name == "node_position") return Field::NodePosition;
  throw Error(ErrorCode::FieldMismatch, "unknown graph field '" + std::string(name) + "'");
}

void validate(const GraphTensor& g) {
  const auto offsets = g.offsets();
  if (offsets.back() != g.num_nodes()) {
    throw Error(ErrorCode::InvalidGraph, "sizes sum to " + std::to_string(offsets.back()) +
                                             " but node_feature has " +
                                             std::to_string(g.num_nodes()) + " rows");
  }
  if (g.edge_src.size() != g.edge_dst.size())
    throw Error(ErrorCode::InvalidGraph, "edge_src and edge_dst lengths differ");
  const auto owner = g.graph_index();
  for (std::size_t e = 0; e < g.edge_src.size(); ++e) {
    const int s = g.edge_src[e];
    const int d = g.edge_dst[e];
    if (s < 0 || d < 0 || s >= g.num_nodes() || d >= g.num_nodes())
      throw Error(ErrorCode::InvalidGraph, "edge " + std::to_string(e) + " out of range");
    if (owner[s] != owner[d])
      throw Error(ErrorCode::InvalidGraph, "edge " + std::to_string(e) + " crosses subgraphs");
  }
  if (g.edge_feature && g.edge_feature->rows() != g.num_edges())
    throw Error(ErrorCode::InvalidGraph, "edge_feature rows != edge count");
  if (g.edge_weight && g.edge_weight->size() != g.num_edges())
    throw Error(ErrorCode::InvalidGraph, "edge_weight length != edge count");
  if (g.node_position && g.node_position->rows() != g.num_nodes())
    throw Error(ErrorCode::InvalidGraph, "node_position rows != node count");
}

GraphTensor merge(const std::vector<GraphTensor>& graphs) {
  if (graphs.empty()) throw Error(ErrorCode::EmptyBatch, "merge of zero graphs");
  const GraphTensor& first = graphs.front();
  Index nodes = 0, edges = 0;
  for (const auto& g : graphs) {
    if (g.node_feature.cols() != first.node_feature.cols())
      throw Error(ErrorCode::FieldMismatch, "node_feature widths differ");
    if (g.edge_feature.has_value() != first.edge_feature.has_value() ||
        g.edge_weight.has_value() != first.edge_weight.has_value() ||
        g.node_position.has_value() != first.node_position.has_value())
      throw Error(ErrorCode::FieldMismatch, "optional field presence differs");
    if (g.edge_feature && g.edge_feature->cols() != first.edge_feature->cols())
      throw Error(ErrorCode::FieldMismatch, "edge_feature widths differ");
    if (g.node_position && g.node_position->cols() != first.node_position->cols())
      throw Error(ErrorCode::FieldMismatch, "node_position widths differ");
    nodes += g.num_nodes();
    edges += g.num_edges();
  }

  GraphTensor out;
  out.node_feature.resize(nodes, first.node_feature.cols());
  out.edge_src.reserve(static_cast<std::size_t>(edges));
  out.edge_dst.reserve(static_cast<std::size_t>(edges));
  if (first.edge_feature) out.edge_feature = Matrix(edges, first.edge_feature->cols());
  if (first.edge_weight) out.edge_weight = Vector(edges);
  if (first.node_position) out.node_position = Matrix(nodes, first.node_position->cols());

  Index node_offset = 0, edge_offset = 0;
  for (const auto& g : graphs) {
    out.sizes.insert(out.sizes.end(), g.sizes.begin(), g.sizes.end());
    out.node_feature.middleRows(node_offset, g.num_nodes()) = g.node_feature;
    for (Index e = 0; e < g.num_edges(); ++e) {
      out.edge_src.push_back(g.edge_src[e] + static_cast<int>(node_offset));
      out.edge_dst.push_back(g.edge_dst[e] + static_cast<int>(node_offset));
    }
    if (g.edge_feature) out.edge_feature->middleRows(edge_offset, g.num_edges()) = *g.edge_feature;
    if (g.edge_weight) out.edge_weight->segment(edge_offset, g.num_edges()) = *g.edge_weight;
    if (g.node_position)
      out.node_position->middleRows(node_offset, g.num_nodes()) = *g.node_position;
    node_offset += g.num_nodes();
    edge_offset += g.num_edges();
  }
  return out;
}

std::vector<GraphTensor> separate(const GraphTensor& g) {
  const auto offsets = g.offsets();
  const std::size_t k = g.sizes.size();
  std::vector<GraphTensor> out(k);
  std::vector<std::vector<Index>> edge_ids(k);
  const auto owner = g.graph_index();
  for (Index e = 0; e < g.num_edges(); ++e) edge_ids[owner[g.edge_src[e]]].push_back(e);

  for (std::size_t i = 0; i < k; ++i) {
    GraphTensor& sub = out[i];
    const int begin = offsets[i];
    sub.sizes = {g.sizes[i]};
    sub.node_feature = g.node_feature.middleRows(begin, g.sizes[i]);
    const auto& ids = edge_ids[i];
    const Index ne = static_cast<Index>(ids.size());
    if (g.edge_feature) sub.edge_feature = Matrix(ne, g.edge_feature->cols());
    if (g.edge_weight) sub.edge_weight = Vector(ne);
    for (Index j = 0; j < ne; ++j) {
      sub.edge_src.push_back(g.edge_src[ids[j]] - begin);
      sub.edge_dst.push_back(g.edge_dst[ids[j]] - begin);
      if (g.edge_feature) sub.edge_feature->row(j) = g.edge_feature->row(ids[j]);
      if (g.edge_weight) (*sub.edge_weight)(j) = (*g.edge_weight)(ids[j]);
    }
    if (g.node_position) sub.node_position = g.node_position->middleRows(begin, g.sizes[i]);
  }
  return out;
}

namespace {

std::vector<int> to_indices(const Matrix& data) {
  if (data.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "index field must have one column");
  std::vector<int> out(static_cast<std::size_t>(data.rows()));
  for (Index i = 0; i < data.rows(); ++i) out[i] = static_cast<int>(data(i, 0));
  return out;
}

void expect_rows(const Matrix& data, Index rows, const char* what) {
  if (data.rows() != rows) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects " + std::to_string(rows) +
                                              " rows, got " + std::to_string(data.rows()));
  }
}

}  // namespace

GraphTensor update(const GraphTensor& g, Field field, const Matrix& data) {
  GraphTensor out = g;
  switch (field) {
    case Field::Sizes: {
      auto sizes = to_indices(data);
      out.sizes = std::move(sizes);
      break;
    }
    case Field::NodeFeature:
      expect_rows(data, g.num_nodes(), "node_feature");
      out.node_feature = data;
      break;
    case Field::EdgeSrc:
      expect_rows(data, g.num_edges(), "edge_src");
      out.edge_src = to_indices(data);
      break;
    case Field::EdgeDst:
      expect_rows(data, g.num_edges(), "edge_dst");
      out.edge_dst = to_indices(data);
      break;
    case Field::EdgeFeature:
      expect_rows(data, g.num_edges(), "edge_feature");
      out.edge_feature = data;
      break;
    case Field::EdgeWeight:
      expect_rows(data, g.num_edges(), "edge_weight");
      if (data.cols() != 1) throw Error(ErrorCode::ShapeMismatch, "edge_weight must be one column");
      out.edge_weight = data.col(0);
      break;
    case Field::NodePosition:
      expect_rows(data, g.num_nodes(), "node_position");
      out.node_position = data;
      break;
  }
  validate(out);
  return out;
}

GraphTensor remove(const GraphTensor& g, Field field) {
  GraphTensor out = g;
  switch (field) {
    case Field::EdgeFeature: out.edge_feature.reset(); break;
    case Field::EdgeWeight: out.edge_weight.reset(); break;
    case Field::NodePosition: out.node_position.reset(); break;
    default:
      throw Error(ErrorCode::RequiredFieldRemoval, "sizes, node_feature, edge_src and edge_dst are required");
  }
  return out;
}

bool approx_equal(const GraphTensor& a, const GraphTensor& b, double tol) {
  auto close = [tol](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           (x.size() == 0 || (x - y).cwiseAbs().maxCoeff() <= tol);
  };
  if (a.sizes != b.sizes || a.edge_src != b.edge_src || a.edge_dst != b.edge_dst) return false;
  if (!close(a.node_feature, b.node_feature)) return false;
  if (a.edge_feature.has_value() != b.edge_feature.has_value()) return false;
  if (a.edge_feature && !close(*a.edge_feature, *b.edge_feature)) return false;
  if (a.edge_weight.has_value() != b.edge_weight.has_value()) return false;
  if (a.edge_weight && !close(Matrix(*a.edge_weight), Matrix(*b.edge_weight))) return false;
  if (a.node_position.has_value() != b.node_position.has_value()) return false;
  if (a.node_position && !close(*a.node_position, *b.node_position)) return false;
  return true;
}

GraphTensor propagate(const GraphTensor& g, Aggregation mode) {
  GraphTensor out = g;
  out.node_feature = aggregate_incoming(g.node_feature, g.edge_src, g.edge_dst, g.edge_weight, mode);
  return out;
}

}  // namespace molgnn
