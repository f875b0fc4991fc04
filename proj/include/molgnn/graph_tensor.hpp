#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string_view>
#include <vector>

#include "molgnn/error.hpp"

namespace molgnn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Disjoint union of one or more graphs. Subgraph k owns the contiguous node
/// block [offset(k), offset(k) + sizes[k]); edges never cross blocks.
struct GraphTensor {
  std::vector<int> sizes;
  Matrix node_feature;
  std::vector<int> edge_src;
  std::vector<int> edge_dst;
  std::optional<Matrix> edge_feature;
  std::optional<Vector> edge_weight;
  std::optional<Matrix> node_position;

  Index num_nodes() const { return node_feature.rows(); }
  Index num_edges() const { return static_cast<Index>(edge_src.size()); }
  Index num_graphs() const { return static_cast<Index>(sizes.size()); }

  /// First node index of every subgraph plus the total node count.
  std::vector<int> offsets() const;
  /// Subgraph id of every node (non-decreasing).
  std::vector<int> graph_index() const;
};

enum class Field { Sizes, NodeFeature, EdgeSrc, EdgeDst, EdgeFeature, EdgeWeight, NodePosition };

Field field_from_name(std::string_view name);

enum class Aggregation { Sum, Mean, Max };

/// Throws InvalidGraph when a structural invariant is broken.
void validate(const GraphTensor& g);

GraphTensor merge(const std::vector<GraphTensor>& graphs);
std::vector<GraphTensor> separate(const GraphTensor& g);

/// Returns a copy with `field` replaced. Row count must match nodes (node
/// fields) or edges (edge fields); edge_weight takes a single column.
GraphTensor update(const GraphTensor& g, Field field, const Matrix& data);
GraphTensor remove(const GraphTensor& g, Field field);

/// Structural equality with an absolute tolerance on floating fields.
bool approx_equal(const GraphTensor& a, const GraphTensor& b, double tol = 0.0);

/// out[i] = agg over edges (j -> i) of w_e * h_j. Nodes without incoming
/// edges get zeros in every mode.
template <typename Derived>
Matrix aggregate_incoming(const Eigen::MatrixBase<Derived>& h, const std::vector<int>& src,
                          const std::vector<int>& dst, const std::optional<Vector>& weight,
                          Aggregation mode) {
  Matrix out = Matrix::Zero(h.rows(), h.cols());
  std::vector<int> count(static_cast<std::size_t>(h.rows()), 0);
  for (std::size_t e = 0; e < src.size(); ++e) {
    const double w = weight ? (*weight)(static_cast<Index>(e)) : 1.0;
    auto row = out.row(dst[e]);
    if (mode == Aggregation::Max) {
      if (count[dst[e]] == 0) row = w * h.row(src[e]);
      else row = row.cwiseMax(w * h.row(src[e]));
    } else {
      row += w * h.row(src[e]);
    }
    ++count[dst[e]];
  }
  if (mode == Aggregation::Mean) {
    for (Index i = 0; i < out.rows(); ++i) {
      if (count[i] > 0) out.row(i) /= static_cast<double>(count[i]);
    }
  }
  return out;
}

/// Replaces node_feature with the aggregate of incoming neighbours.
GraphTensor propagate(const GraphTensor& g, Aggregation mode = Aggregation::Sum);

}  // namespace molgnn
