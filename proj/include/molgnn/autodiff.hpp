#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "molgnn/graph_tensor.hpp"

namespace molgnn {

class Tape;

/// Named trainable tensors. Ordered so that iteration (and therefore
/// checkpoint layout and optimizer updates) is deterministic.
using ParameterMap = std::map<std::string, Matrix>;

/// Handle to a value recorded on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Scalar value of a 1x1 result.
  double item() const;
};

enum class OpKind {
  Matmul,
  Add,
  Sub,
  Mul,
  Scale,
  ScaleBy,
  ScaleRows,
  Concat,
  Relu,
  LeakyRelu,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  Softplus,
  Square,
  Sum,
  SumAxis,
  Mean,
  MeanAxis,
  SegmentSum,
  SegmentMax,
  SegmentSoftmax,
  GatherRows,
  BatchNormTrain,
  BatchNormEval,
  MaskedMse,
  MaskedMae,
  MaskedHuber,
  MaskedBce,
  SoftmaxCrossEntropy,
};

/// Every differentiable operation the tape can record.
std::span<const OpKind> registered_ops();
std::string_view op_name(OpKind kind);

/// Append-only record of forward operations. Leaves are constants, inputs
/// (gradients requested) and named parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var input(Matrix value);
  /// Registers a named parameter leaf; a repeated name returns the same leaf.
  Var parameter(const std::string& name, const Matrix& value);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  OpKind kind(int id) const { return nodes_[id].kind; }

  /// Adds a recorded op. `backward` may be empty only when no input needs a
  /// gradient; otherwise the op is rejected as lacking a backward rule.
  Var record(OpKind kind, Matrix value, std::vector<int> inputs, BackwardFn backward);

  /// Reverse sweep from a 1x1 output. Returns the gradient of every
  /// registered parameter (zeros for parameters the output ignores).
  ParameterMap backward(Var output);
  /// Gradient of any recorded value after backward(); zeros when unreached.
  Matrix grad(Var v) const;

  /// Accumulates into the gradient buffer of `id` (used by backward rules).
  void accumulate(int id, const Matrix& g);

  /// Rejects NaN/Inf forward values with NonFiniteValue when enabled.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

 private:
  enum class Leaf { None, Constant, Input, Parameter };

  struct Node {
    OpKind kind{};
    Leaf leaf = Leaf::None;
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  Var push_leaf(Leaf leaf, Matrix value, bool requires_grad);

  std::vector<Node> nodes_;
  std::map<std::string, int> parameters_;
  bool check_finite_;
  bool has_backward_pass_ = false;
};

Var matmul(Var a, Var b);
/// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// Multiplies `a` by the 1x1 value `s`.
Var scale_by(Var a, Var s);
/// Multiplies row r of `a` by s(r, 0); `s` is rows x 1.
Var scale_rows(Var a, Var s);
/// Column-wise concatenation.
Var concat(const std::vector<Var>& parts);

Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var sigmoid(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);

/// Sum of every entry (1x1).
Var sum(Var a);
/// axis 0 reduces rows (1 x cols); axis 1 reduces columns (rows x 1).
Var sum(Var a, int axis);
Var mean(Var a);
Var mean(Var a, int axis);

/// out.row(s) = sum of data rows r with ids[r] == s. Ids need not be sorted.
Var segment_sum(Var data, const std::vector<int>& ids, Index num_segments);
/// Column-wise maximum per segment; empty segments are zero.
Var segment_max(Var data, const std::vector<int>& ids, Index num_segments);
/// Column-wise softmax within each segment.
Var segment_softmax(Var logits, const std::vector<int>& ids, Index num_segments);
Var gather_rows(Var data, const std::vector<int>& indices);

struct BatchStats {
  Matrix mean;      // 1 x cols
  Matrix variance;  // 1 x cols, biased
};

/// Normalizes columns with the batch statistics, which are also returned.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr);
/// Normalizes columns with fixed statistics (running averages).
Var batch_norm_eval(Var x, Var gamma, Var beta, const BatchStats& stats, double eps);

/// Losses average over entries whose mask is non-zero; an all-zero mask is EmptyMask.
Var masked_mse(Var pred, const Matrix& target, const Matrix& mask);
Var masked_mae(Var pred, const Matrix& target, const Matrix& mask);
Var masked_huber(Var pred, const Matrix& target, const Matrix& mask, double delta = 1.0);
/// Binary cross entropy on logits in the stable log-sum-exp form.
Var masked_bce(Var logits, const Matrix& target, const Matrix& mask);
/// Mean negative log-likelihood of `labels` over rows with weight(r) != 0.
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels, const Vector& weight);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// "input[k](r,c)" entries skipped because one-sided differences disagree.
  std::vector<std::string> nondifferentiable;
  std::string worst;
  bool passed = true;
};

using ScalarFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients against central differences. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Matrix>& inputs,
                           double eps = 1e-6, double tol = 1e-4, double floor = 1e-3);

}  // namespace molgnn
