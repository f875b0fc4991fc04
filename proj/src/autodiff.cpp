#include "molgnn/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>

namespace molgnn {
namespace {

constexpr std::array kOps = {
    OpKind::Matmul,     OpKind::Add,        OpKind::Sub,
    OpKind::Mul,        OpKind::Scale,      OpKind::ScaleBy,
    OpKind::ScaleRows,  OpKind::Concat,     OpKind::Relu,
    OpKind::LeakyRelu,  OpKind::Sigmoid,    OpKind::Tanh,
    OpKind::Exp,        OpKind::Log,        OpKind::Softplus,
    OpKind::Square,     OpKind::Sum,        OpKind::SumAxis,
    OpKind::Mean,       OpKind::MeanAxis,   OpKind::SegmentSum,
    OpKind::SegmentMax, OpKind::SegmentSoftmax, OpKind::GatherRows,
    OpKind::BatchNormTrain, OpKind::BatchNormEval, OpKind::MaskedMse,
    OpKind::MaskedMae,  OpKind::MaskedHuber, OpKind::MaskedBce,
    OpKind::SoftmaxCrossEntropy,
};

std::string shape_of(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw Error(ErrorCode::DisconnectedOutput, "variable is not on a tape");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw Error(ErrorCode::DisconnectedOutput, "operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + shape_of(a) + " vs " + shape_of(b));
}

void check_ids(const char* op, const std::vector<int>& ids, Index rows, Index limit) {
  if (static_cast<Index>(ids.size()) != rows)
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": id count differs from row count");
  for (int id : ids) {
    if (id < 0 || id >= limit)
      throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": index out of range");
  }
}

// Shared plumbing for unary elementwise maps: y = f(x), dx = g * df(x, y).
template <typename Forward, typename Derivative>
Var elementwise(OpKind kind, Var a, Forward f, Derivative df) {
  Tape& tape = tape_of(a);
  const Matrix& x = a.value();
  Matrix y = x.unaryExpr(f);
  const int ia = a.id;
  return tape.record(kind, std::move(y), {ia}, [ia, df](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(ia);
    Matrix dx(xv.rows(), xv.cols());
    for (Index k = 0; k < xv.size(); ++k) dx.data()[k] = g.data()[k] * df(xv.data()[k]);
    t.accumulate(ia, dx);
  });
}

double mask_total(const char* op, const Matrix& pred, const Matrix& target, const Matrix& mask) {
  require_same_shape(op, pred, target);
  require_same_shape(op, pred, mask);
  const double total = (mask.array() != 0.0).cast<double>().sum();
  if (total == 0.0) throw Error(ErrorCode::EmptyMask, std::string(op) + ": no labelled entries");
  return total;
}

// Generic masked mean of a per-entry loss l(r) with derivative dl(r), r = pred - target
// (or the logit itself for bce, supplied through the closures).
template <typename Loss, typename Grad>
Var masked_loss(OpKind kind, const char* op, Var pred, const Matrix& target, const Matrix& mask,
                Loss loss, Grad dloss) {
  Tape& tape = tape_of(pred);
  const Matrix& p = pred.value();
  const double total = mask_total(op, p, target, mask);
  double acc = 0.0;
  for (Index k = 0; k < p.size(); ++k) {
    if (mask.data()[k] != 0.0) acc += loss(p.data()[k], target.data()[k]);
  }
  const int ip = pred.id;
  return tape.record(kind, Matrix::Constant(1, 1, acc / total), {ip},
                     [ip, target, mask, total, dloss](Tape& t, const Matrix& g) {
                       const Matrix& pv = t.value(ip);
                       Matrix dp = Matrix::Zero(pv.rows(), pv.cols());
                       for (Index k = 0; k < pv.size(); ++k) {
                         if (mask.data()[k] != 0.0)
                           dp.data()[k] = g(0, 0) * dloss(pv.data()[k], target.data()[k]) / total;
                       }
                       t.accumulate(ip, dp);
                     });
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

std::span<const OpKind> registered_ops() { return kOps; }

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Matmul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleBy: return "scale_by";
    case OpKind::ScaleRows: return "scale_rows";
    case OpKind::Concat: return "concat";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softplus: return "softplus";
    case OpKind::Square: return "square";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::Mean: return "mean";
    case OpKind::MeanAxis: return "mean_axis";
    case OpKind::SegmentSum: return "segment_sum";
    case OpKind::SegmentMax: return "segment_max";
    case OpKind::SegmentSoftmax: return "segment_softmax";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::BatchNormTrain: return "batch_norm_train";
    case OpKind::BatchNormEval: return "batch_norm_eval";
    case OpKind::MaskedMse: return "masked_mse";
    case OpKind::MaskedMae: return "masked_mae";
    case OpKind::MaskedHuber: return "masked_huber";
    case OpKind::MaskedBce: return "masked_bce";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

// ---------------------------------------------------------------- Var / Tape

const Matrix& Var::value() const { return tape_of(*this).value(id); }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on non-scalar " + shape_of(v));
  return v(0, 0);
}

Tape::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

Var Tape::push_leaf(Leaf leaf, Matrix value, bool requires_grad) {
  Node node;
  node.leaf = leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push_leaf(Leaf::Constant, std::move(value), false); }

Var Tape::input(Matrix value) { return push_leaf(Leaf::Input, std::move(value), true); }

Var Tape::parameter(const std::string& name, const Matrix& value) {
  if (auto it = parameters_.find(name); it != parameters_.end()) return Var{this, it->second};
  const Var v = push_leaf(Leaf::Parameter, value, true);
  parameters_.emplace(name, v.id);
  return v;
}

Var Tape::record(OpKind kind, Matrix value, std::vector<int> inputs, BackwardFn backward) {
  if (check_finite_ && !value.allFinite())
    throw Error(ErrorCode::NonFiniteValue, std::string(op_name(kind)) + " produced a non-finite value");
  bool needs = false;
  for (int id : inputs) needs = needs || nodes_[id].requires_grad;
  if (needs && !backward)
    throw Error(ErrorCode::InvalidModel, std::string(op_name(kind)) + " has no backward rule");
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  node.requires_grad = needs;
  node.inputs = std::move(inputs);
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) node.grad = g;
  else node.grad += g;
}

ParameterMap Tape::backward(Var output) {
  if (output.tape != this || output.id < 0 || output.id >= static_cast<int>(nodes_.size()))
    throw Error(ErrorCode::DisconnectedOutput, "output is not recorded on this tape");
  if (nodes_[output.id].value.size() != 1)
    throw Error(ErrorCode::ShapeMismatch, "backward needs a 1x1 output");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  has_backward_pass_ = true;
  if (nodes_[output.id].requires_grad) {
    nodes_[output.id].grad = Matrix::Ones(1, 1);
    for (int id = output.id; id >= 0; --id) {
      Node& node = nodes_[id];
      if (!node.backward || node.grad.size() == 0) continue;
      const Matrix g = node.grad;
      node.backward(*this, g);
    }
  }
  ParameterMap grads;
  for (const auto& [name, id] : parameters_) grads.emplace(name, grad(Var{this, id}));
  return grads;
}

Matrix Tape::grad(Var v) const {
  if (v.tape != this) throw Error(ErrorCode::DisconnectedOutput, "variable is not on this tape");
  const Node& node = nodes_[v.id];
  if (!has_backward_pass_ || node.grad.size() == 0)
    return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.cols() != y.rows())
    throw Error(ErrorCode::ShapeMismatch, "matmul: " + shape_of(x) + " * " + shape_of(y));
  Matrix out = x * y;
  const int ia = a.id, ib = b.id;
  return tape.record(OpKind::Matmul, std::move(out), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const bool broadcast = y.rows() == 1 && x.rows() != 1 && y.cols() == x.cols();
  if (!broadcast) require_same_shape("add", x, y);
  Matrix out = x;
  if (broadcast) out.rowwise() += y.row(0);
  else out += y;
  const int ia = a.id, ib = b.id;
  return tape.record(OpKind::Add, std::move(out), {ia, ib},
                     [ia, ib, broadcast](Tape& t, const Matrix& g) {
                       t.accumulate(ia, g);
                       if (broadcast) t.accumulate(ib, g.colwise().sum());
                       else t.accumulate(ib, g);
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  const int ia = a.id, ib = b.id;
  return tape.record(OpKind::Sub, a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  const int ia = a.id, ib = b.id;
  return tape.record(OpKind::Mul, a.value().cwiseProduct(b.value()), {ia, ib},
                     [ia, ib](Tape& t, const Matrix& g) {
                       if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                       if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                     });
}

Var scale(Var a, double c) {
  Tape& tape = tape_of(a);
  const int ia = a.id;
  return tape.record(OpKind::Scale, c * a.value(), {ia},
                     [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, c * g); });
}

Var scale_by(Var a, Var s) {
  Tape& tape = tape_of(a, s);
  if (s.value().size() != 1) throw Error(ErrorCode::ShapeMismatch, "scale_by: factor must be 1x1");
  const int ia = a.id, is = s.id;
  return tape.record(OpKind::ScaleBy, s.value()(0, 0) * a.value(), {ia, is},
                     [ia, is](Tape& t, const Matrix& g) {
                       t.accumulate(ia, t.value(is)(0, 0) * g);
                       if (t.requires_grad(is))
                         t.accumulate(is, Matrix::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
                     });
}

Var scale_rows(Var a, Var s) {
  Tape& tape = tape_of(a, s);
  const Matrix& x = a.value();
  const Matrix& f = s.value();
  if (f.cols() != 1 || f.rows() != x.rows())
    throw Error(ErrorCode::ShapeMismatch, "scale_rows: factors " + shape_of(f) + " for " + shape_of(x));
  Matrix out = f.col(0).asDiagonal() * x;
  const int ia = a.id, is = s.id;
  return tape.record(OpKind::ScaleRows, std::move(out), {ia, is}, [ia, is](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, t.value(is).col(0).asDiagonal() * g);
    if (t.requires_grad(is)) t.accumulate(is, g.cwiseProduct(t.value(ia)).rowwise().sum());
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Tape& tape = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<int> ids;
  std::vector<Index> widths;
  for (const Var& p : parts) {
    tape_of(parts.front(), p);
    if (p.rows() != rows) throw Error(ErrorCode::ShapeMismatch, "concat: row counts differ");
    ids.push_back(p.id);
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape.record(OpKind::Concat, std::move(out), ids, [ids, widths](Tape& t, const Matrix& g) {
    Index offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(offset, widths[k]));
      offset += widths[k];
    }
  });
}

// ---------------------------------------------------------------- elementwise

Var relu(Var a) {
  return elementwise(OpKind::Relu, a, [](double x) { return x > 0 ? x : 0.0; },
                     [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return elementwise(OpKind::LeakyRelu, a, [slope](double x) { return x > 0 ? x : slope * x; },
                     [slope](double x) { return x > 0 ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  return elementwise(OpKind::Sigmoid, a, stable_sigmoid, [](double x) {
    const double s = stable_sigmoid(x);
    return s * (1.0 - s);
  });
}

Var tanh(Var a) {
  return elementwise(OpKind::Tanh, a, [](double x) { return std::tanh(x); }, [](double x) {
    const double y = std::tanh(x);
    return 1.0 - y * y;
  });
}

Var exp(Var a) {
  return elementwise(OpKind::Exp, a, [](double x) { return std::exp(x); },
                     [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return elementwise(OpKind::Log, a, [](double x) { return std::log(x); },
                     [](double x) { return 1.0 / x; });
}

Var softplus(Var a) { return elementwise(OpKind::Softplus, a, stable_softplus, stable_sigmoid); }

Var square(Var a) {
  return elementwise(OpKind::Square, a, [](double x) { return x * x; },
                     [](double x) { return 2.0 * x; });
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  Tape& tape = tape_of(a);
  const int ia = a.id;
  return tape.record(OpKind::Sum, Matrix::Constant(1, 1, a.value().sum()), {ia},
                     [ia](Tape& t, const Matrix& g) {
                       const Matrix& x = t.value(ia);
                       t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
                     });
}

Var sum(Var a, int axis) {
  Tape& tape = tape_of(a);
  if (axis != 0 && axis != 1) throw Error(ErrorCode::ShapeMismatch, "sum: axis must be 0 or 1");
  const int ia = a.id;
  Matrix out = axis == 0 ? Matrix(a.value().colwise().sum()) : Matrix(a.value().rowwise().sum());
  return tape.record(OpKind::SumAxis, std::move(out), {ia}, [ia, axis](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    if (axis == 0) t.accumulate(ia, g.replicate(x.rows(), 1));
    else t.accumulate(ia, g.replicate(1, x.cols()));
  });
}

Var mean(Var a) {
  Tape& tape = tape_of(a);
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean of an empty tensor");
  const int ia = a.id;
  return tape.record(OpKind::Mean, Matrix::Constant(1, 1, a.value().sum() / n), {ia},
                     [ia, n](Tape& t, const Matrix& g) {
                       const Matrix& x = t.value(ia);
                       t.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / n));
                     });
}

Var mean(Var a, int axis) {
  Tape& tape = tape_of(a);
  if (axis != 0 && axis != 1) throw Error(ErrorCode::ShapeMismatch, "mean: axis must be 0 or 1");
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean over an empty axis");
  const int ia = a.id;
  Matrix out = axis == 0 ? Matrix(a.value().colwise().sum() / n) : Matrix(a.value().rowwise().sum() / n);
  return tape.record(OpKind::MeanAxis, std::move(out), {ia}, [ia, axis, n](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    if (axis == 0) t.accumulate(ia, g.replicate(x.rows(), 1) / n);
    else t.accumulate(ia, g.replicate(1, x.cols()) / n);
  });
}

// ---------------------------------------------------------------- segments

Var segment_sum(Var data, const std::vector<int>& ids, Index num_segments) {
  Tape& tape = tape_of(data);
  const Matrix& x = data.value();
  check_ids("segment_sum", ids, x.rows(), num_segments);
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (Index r = 0; r < x.rows(); ++r) out.row(ids[r]) += x.row(r);
  const int id = data.id;
  return tape.record(OpKind::SegmentSum, std::move(out), {id}, [id, ids](Tape& t, const Matrix& g) {
    Matrix dx(static_cast<Index>(ids.size()), g.cols());
    for (Index r = 0; r < dx.rows(); ++r) dx.row(r) = g.row(ids[r]);
    t.accumulate(id, dx);
  });
}

Var segment_max(Var data, const std::vector<int>& ids, Index num_segments) {
  Tape& tape = tape_of(data);
  const Matrix& x = data.value();
  check_ids("segment_max", ids, x.rows(), num_segments);
  Matrix out = Matrix::Zero(num_segments, x.cols());
  // winner(s, c) is the first row attaining the maximum; -1 for empty segments.
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> winner =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(num_segments, x.cols(), -1);
  for (Index r = 0; r < x.rows(); ++r) {
    const int s = ids[r];
    for (Index c = 0; c < x.cols(); ++c) {
      if (winner(s, c) < 0 || x(r, c) > out(s, c)) {
        out(s, c) = x(r, c);
        winner(s, c) = static_cast<int>(r);
      }
    }
  }
  const int id = data.id;
  return tape.record(OpKind::SegmentMax, std::move(out), {id}, [id, winner](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(id);
    Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
    for (Index s = 0; s < winner.rows(); ++s) {
      for (Index c = 0; c < winner.cols(); ++c) {
        if (winner(s, c) >= 0) dx(winner(s, c), c) += g(s, c);
      }
    }
    t.accumulate(id, dx);
  });
}

Var segment_softmax(Var logits, const std::vector<int>& ids, Index num_segments) {
  Tape& tape = tape_of(logits);
  const Matrix& x = logits.value();
  check_ids("segment_softmax", ids, x.rows(), num_segments);
  Matrix peak = Matrix::Constant(num_segments, x.cols(), -std::numeric_limits<double>::infinity());
  for (Index r = 0; r < x.rows(); ++r) peak.row(ids[r]) = peak.row(ids[r]).cwiseMax(x.row(r));
  Matrix y(x.rows(), x.cols());
  Matrix denom = Matrix::Zero(num_segments, x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    y.row(r) = (x.row(r) - peak.row(ids[r])).array().exp().matrix();
    denom.row(ids[r]) += y.row(r);
  }
  for (Index r = 0; r < x.rows(); ++r) y.row(r) = y.row(r).cwiseQuotient(denom.row(ids[r]));
  const int id = logits.id;
  Matrix saved = y;
  return tape.record(OpKind::SegmentSoftmax, std::move(y), {id},
                     [id, ids, num_segments, saved](Tape& t, const Matrix& g) {
                       const Matrix gy = g.cwiseProduct(saved);
                       Matrix seg = Matrix::Zero(num_segments, g.cols());
                       for (Index r = 0; r < g.rows(); ++r) seg.row(ids[r]) += gy.row(r);
                       Matrix dx(g.rows(), g.cols());
                       for (Index r = 0; r < g.rows(); ++r)
                         dx.row(r) = gy.row(r) - saved.row(r).cwiseProduct(seg.row(ids[r]));
                       t.accumulate(id, dx);
                     });
}

Var gather_rows(Var data, const std::vector<int>& indices) {
  Tape& tape = tape_of(data);
  const Matrix& x = data.value();
  for (int i : indices) {
    if (i < 0 || i >= x.rows()) throw Error(ErrorCode::ShapeMismatch, "gather_rows: index out of range");
  }
  Matrix out(static_cast<Index>(indices.size()), x.cols());
  for (Index k = 0; k < out.rows(); ++k) out.row(k) = x.row(indices[k]);
  const int id = data.id;
  return tape.record(OpKind::GatherRows, std::move(out), {id}, [id, indices](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(id);
    Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
    for (Index k = 0; k < g.rows(); ++k) dx.row(indices[k]) += g.row(k);
    t.accumulate(id, dx);
  });
}

// ---------------------------------------------------------------- normalization

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  Tape& tape = tape_of(x, gamma);
  tape_of(x, beta);
  const Matrix& v = x.value();
  const Index n = v.rows();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "batch_norm on an empty batch");
  if (gamma.rows() != 1 || gamma.cols() != v.cols() || beta.rows() != 1 || beta.cols() != v.cols())
    throw Error(ErrorCode::ShapeMismatch, "batch_norm: gamma/beta must be 1 x cols");
  const Matrix mu = v.colwise().mean();
  Matrix centered = v.rowwise() - mu.row(0);
  const Matrix var = centered.array().square().colwise().mean().matrix();
  const Matrix inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  if (stats) *stats = BatchStats{mu, var};
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return tape.record(OpKind::BatchNormTrain, std::move(out), {ix, ig, ib},
                     [ix, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
                       const double count = static_cast<double>(g.rows());
                       t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                       t.accumulate(ib, g.colwise().sum());
                       if (!t.requires_grad(ix)) return;
                       const Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
                       const Matrix s1 = dxhat.colwise().sum();
                       const Matrix s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                       Matrix dx = (count * dxhat.array()).rowwise() - s1.row(0).array();
                       dx.array() -= xhat.array().rowwise() * s2.row(0).array();
                       dx.array().rowwise() *= (inv_std.row(0).array() / count);
                       t.accumulate(ix, dx);
                     });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const BatchStats& stats, double eps) {
  Tape& tape = tape_of(x, gamma);
  tape_of(x, beta);
  const Matrix& v = x.value();
  if (gamma.cols() != v.cols() || beta.cols() != v.cols() || stats.mean.cols() != v.cols())
    throw Error(ErrorCode::ShapeMismatch, "batch_norm: statistics width differs from input");
  const Matrix inv_std = (stats.variance.array() + eps).rsqrt().matrix();
  Matrix xhat = (v.rowwise() - stats.mean.row(0)).array().rowwise() * inv_std.row(0).array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return tape.record(OpKind::BatchNormEval, std::move(out), {ix, ig, ib},
                     [ix, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
                       t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                       t.accumulate(ib, g.colwise().sum());
                       const Matrix factor = t.value(ig).cwiseProduct(inv_std);
                       t.accumulate(ix, g.array().rowwise() * factor.row(0).array());
                     });
}

// ---------------------------------------------------------------- losses

Var masked_mse(Var pred, const Matrix& target, const Matrix& mask) {
  return masked_loss(
      OpKind::MaskedMse, "masked_mse", pred, target, mask,
      [](double p, double y) { return (p - y) * (p - y); },
      [](double p, double y) { return 2.0 * (p - y); });
}

Var masked_mae(Var pred, const Matrix& target, const Matrix& mask) {
  return masked_loss(
      OpKind::MaskedMae, "masked_mae", pred, target, mask,
      [](double p, double y) { return std::abs(p - y); },
      [](double p, double y) { return p > y ? 1.0 : (p < y ? -1.0 : 0.0); });
}

Var masked_huber(Var pred, const Matrix& target, const Matrix& mask, double delta) {
  return masked_loss(
      OpKind::MaskedHuber, "masked_huber", pred, target, mask,
      [delta](double p, double y) {
        const double r = std::abs(p - y);
        return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
      },
      [delta](double p, double y) { return std::clamp(p - y, -delta, delta); });
}

Var masked_bce(Var logits, const Matrix& target, const Matrix& mask) {
  return masked_loss(
      OpKind::MaskedBce, "masked_bce", logits, target, mask,
      [](double z, double y) { return stable_softplus(z) - z * y; },
      [](double z, double y) { return stable_sigmoid(z) - y; });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& labels, const Vector& weight) {
  Tape& tape = tape_of(logits);
  const Matrix& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows() || weight.size() != z.rows())
    throw Error(ErrorCode::ShapeMismatch, "softmax_cross_entropy: label/weight count differs from rows");
  const double total = weight.sum();
  if (total == 0.0) throw Error(ErrorCode::EmptyMask, "softmax_cross_entropy: no weighted rows");
  Matrix prob(z.rows(), z.cols());
  double loss = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    if (labels[r] < 0 || labels[r] >= z.cols())
      throw Error(ErrorCode::ShapeMismatch, "softmax_cross_entropy: label out of range");
    const double peak = z.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(r).array() - peak).exp().matrix();
    const double norm = e.sum();
    prob.row(r) = e / norm;
    if (weight(r) != 0.0) loss += weight(r) * (std::log(norm) + peak - z(r, labels[r]));
  }
  const int id = logits.id;
  return tape.record(OpKind::SoftmaxCrossEntropy, Matrix::Constant(1, 1, loss / total), {id},
                     [id, labels, weight, total, prob](Tape& t, const Matrix& g) {
                       Matrix dz = prob;
                       for (Index r = 0; r < dz.rows(); ++r) {
                         dz(r, labels[r]) -= 1.0;
                         dz.row(r) *= weight(r) * g(0, 0) / total;
                       }
                       t.accumulate(id, dz);
                     });
}

// ---------------------------------------------------------------- gradient check

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Matrix>& inputs, double eps,
                           double tol, double floor) {
  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Matrix& x : xs) vars.push_back(tape.input(x));
    return f(tape, vars).item();
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& x : inputs) vars.push_back(tape.input(x));
  const Var out = f(tape, vars);
  tape.backward(out);
  const double f0 = out.item();

  GradCheckReport report;
  std::vector<Matrix> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix analytic = tape.grad(vars[k]);
    for (Index r = 0; r < inputs[k].rows(); ++r) {
      for (Index c = 0; c < inputs[k].cols(); ++c) {
        const double x0 = inputs[k](r, c);
        probe[k](r, c) = x0 + eps;
        const double fp = evaluate(probe);
        probe[k](r, c) = x0 - eps;
        const double fm = evaluate(probe);
        probe[k](r, c) = x0;

        char label[64];
        std::snprintf(label, sizeof label, "input[%zu](%ld,%ld)", k, static_cast<long>(r),
                      static_cast<long>(c));
        const double forward = (fp - f0) / eps;
        const double backward = (f0 - fm) / eps;
        const double one_sided_gap = std::abs(forward - backward) /
                                     std::max({std::abs(forward), std::abs(backward), floor});
        if (one_sided_gap > 1e-2) {
          report.nondifferentiable.emplace_back(label);
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic(r, c);
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        ++report.checked;
        if (rel > report.max_rel_error || report.worst.empty()) {
          if (rel >= report.max_rel_error) {
            report.max_rel_error = rel;
            char detail[160];
            std::snprintf(detail, sizeof detail, "%s analytic=%.10g numeric=%.10g", label, a, numeric);
            report.worst = detail;
          }
        }
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace molgnn
