#pragma once

// Reverse-mode differentiation over a static computation graph.
//
// A Tape is built once with placeholder inputs and registered parameters,
// then replayed with `forward` on new data as often as needed. `backward`
// propagates an output seed back to the parameters only; derivatives with
// respect to inputs are never formed.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdgm/error.hpp"
#include "kdgm/tensor.hpp"

namespace kdgm {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

inline MatrixMap as_matrix(Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
inline ConstMatrixMap as_matrix(const Tensor& t) {
  return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())};
}
inline ArrayMap as_array(Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }
inline ConstArrayMap as_array(const Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }

/// tanh(x) = 1 - 2 / (exp(2x) + 1), vectorized through Eigen's exp.
/// Exact at 0 and saturates cleanly to ±1; absolute error is a few ulp.
inline void tanh_into(const Tensor& x, Tensor& out) { as_array(out) = 1.0 - 2.0 / ((2.0 * as_array(x)).exp() + 1.0); }

}  // namespace detail

enum class OpKind {
  Input,
  Parameter,
  MatMul,     // a(m x k) * b(k x n)
  Add,        // a + b, same shape
  AddRow,     // a(m x n) + b(1 x n) broadcast over rows
  Sub,        // a - b
  Mul,        // a ⊙ b
  Scale,      // s * a
  AddScalar,  // a + s
  Tanh,
  Square,
  SliceRows,  // rows [offset, offset + count) of a
  Sum,        // 1x1 sum of all entries
  Mean,       // 1x1 mean of all entries
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::AddRow: return "add_row";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Tanh: return "tanh";
    case OpKind::Square: return "square";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
  }
  return "?";
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// Static computation graph with reverse-mode parameter gradients.
///
/// Nodes are appended in construction order, so inputs of a node always
/// precede it and the node list is already topologically sorted.
class Tape {
 public:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Placeholder filled from the `inputs` span of `forward`, in declaration order.
  Var input(std::string name, std::size_t rows, std::size_t cols) {
    Node n;
    n.op = OpKind::Input;
    n.name = std::move(name);
    n.rows = rows;
    n.cols = cols;
    n.slot = input_ids_.size();
    auto v = push(std::move(n));
    input_ids_.push_back(v.id);
    return v;
  }

  /// Trainable parameter filled from the `params` span of `forward`.
  Var parameter(std::string name, std::size_t rows, std::size_t cols) {
    Node n;
    n.op = OpKind::Parameter;
    n.name = std::move(name);
    n.rows = rows;
    n.cols = cols;
    n.slot = param_ids_.size();
    n.requires_grad = true;
    auto v = push(std::move(n));
    param_ids_.push_back(v.id);
    return v;
  }

  Var matmul(Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.cols != nb.rows) shape_fail(OpKind::MatMul, a, b);
    return binary(OpKind::MatMul, a, b, na.rows, nb.cols);
  }

  Var add(Var a, Var b) { return elementwise(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return elementwise(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return elementwise(OpKind::Mul, a, b); }

  Var add_row(Var a, Var row) {
    const Node& na = node(a);
    const Node& nb = node(row);
    if (nb.rows != 1 || nb.cols != na.cols) shape_fail(OpKind::AddRow, a, row);
    return binary(OpKind::AddRow, a, row, na.rows, na.cols);
  }

  Var scale(Var a, double s) { return unary(OpKind::Scale, a, s); }
  Var add_scalar(Var a, double s) { return unary(OpKind::AddScalar, a, s); }
  Var tanh(Var a) { return unary(OpKind::Tanh, a); }
  Var square(Var a) { return unary(OpKind::Square, a); }

  Var slice_rows(Var a, std::size_t offset, std::size_t count) {
    const Node& na = node(a);
    if (count == 0 || offset + count > na.rows) {
      throw ShapeError(std::string("slice_rows: rows [") + std::to_string(offset) + ", " +
                       std::to_string(offset + count) + ") out of range for " + dims(a));
    }
    Node n;
    n.op = OpKind::SliceRows;
    n.a = a.id;
    n.offset = offset;
    n.rows = count;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(std::move(n));
  }

  Var sum(Var a) { return reduce(OpKind::Sum, a); }
  Var mean(Var a) { return reduce(OpKind::Mean, a); }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_inputs() const noexcept { return input_ids_.size(); }
  std::size_t num_parameters() const noexcept { return param_ids_.size(); }
  OpKind op(Var v) const { return node(v).op; }

  /// Evaluates every node. Input and parameter shapes must match their declarations.
  void forward(std::span<const Tensor> inputs, std::span<const Tensor> params) {
    if (inputs.size() != input_ids_.size()) {
      throw ShapeError("forward: expected " + std::to_string(input_ids_.size()) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
    if (params.size() != param_ids_.size()) {
      throw ShapeError("forward: expected " + std::to_string(param_ids_.size()) + " parameters, got " +
                       std::to_string(params.size()));
    }
    values_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      Tensor& out = values_[i];
      if (n.op == OpKind::Input || n.op == OpKind::Parameter) {
        const Tensor& src = n.op == OpKind::Input ? inputs[n.slot] : params[n.slot];
        if (src.rows() != n.rows || src.cols() != n.cols || src.size() != n.rows * n.cols) {
          throw ShapeError(std::string("forward: ") + op_name(n.op) + " '" + n.name + "' declared [" +
                           std::to_string(n.rows) + "x" + std::to_string(n.cols) + "] but got " +
                           shape_string(src.shape()));
        }
      }
      if (out.rows() != n.rows || out.cols() != n.cols || out.rank() != 2) out = Tensor::matrix(n.rows, n.cols);
      eval_node(n, out, inputs, params);
    }
    forwarded_ = true;
    backwarded_ = false;
  }

  const Tensor& value(Var v) const {
    if (!forwarded_) throw StateError("value: forward has not been executed on this tape");
    return values_.at(v.id);
  }

  /// Gradients of `output` (a 1x1 node) scaled by `seed` with respect to every
  /// registered parameter, in registration order.
  std::vector<Tensor> backward(Var output, double seed = 1.0) {
    if (!forwarded_) throw StateError("backward: forward has not been executed on this tape");
    const Node& out = node(output);
    if (out.rows != 1 || out.cols != 1) {
      throw ShapeError("backward: output must be 1x1, got " + dims(output));
    }
    grads_.resize(nodes_.size());
    for (std::size_t i = 0; i <= output.id; ++i) {
      if (!nodes_[i].requires_grad) continue;
      Tensor& g = grads_[i];
      if (g.rows() != nodes_[i].rows || g.cols() != nodes_[i].cols || g.rank() != 2) {
        g = Tensor::matrix(nodes_[i].rows, nodes_[i].cols);
      } else {
        g.fill(0.0);
      }
    }
    if (out.requires_grad) grads_[output.id][0] = seed;
    for (std::size_t i = output.id + 1; i-- > 0;) {
      if (nodes_[i].requires_grad) backprop_node(i);
    }
    std::vector<Tensor> result;
    result.reserve(param_ids_.size());
    for (std::size_t id : param_ids_) {
      if (id <= output.id) {
        result.push_back(grads_[id]);
      } else {
        result.push_back(Tensor::matrix(nodes_[id].rows, nodes_[id].cols));
      }
    }
    backwarded_ = true;
    return result;
  }

 private:
  struct Node {
    OpKind op;
    std::size_t a = npos;
    std::size_t b = npos;
    double scalar = 0.0;
    std::size_t offset = 0;
    std::size_t slot = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool requires_grad = false;
    std::string name;
  };

  const Node& node(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw StateError("Var does not belong to this tape");
    return nodes_[v.id];
  }

  std::string dims(Var v) const {
    const Node& n = node(v);
    return "[" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + "]";
  }

  [[noreturn]] void shape_fail(OpKind op, Var a, Var b) const {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + dims(a) + " and " + dims(b));
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    forwarded_ = false;
    return Var{this, nodes_.size() - 1};
  }

  Var binary(OpKind op, Var a, Var b, std::size_t rows, std::size_t cols) {
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.rows = rows;
    n.cols = cols;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(n));
  }

  Var elementwise(OpKind op, Var a, Var b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.rows != nb.rows || na.cols != nb.cols) shape_fail(op, a, b);
    return binary(op, a, b, na.rows, na.cols);
  }

  Var unary(OpKind op, Var a, double s = 0.0) {
    const Node& na = node(a);
    Node n;
    n.op = op;
    n.a = a.id;
    n.scalar = s;
    n.rows = na.rows;
    n.cols = na.cols;
    n.requires_grad = na.requires_grad;
    return push(std::move(n));
  }

  Var reduce(OpKind op, Var a) {
    const Node& na = node(a);
    Node n;
    n.op = op;
    n.a = a.id;
    n.rows = 1;
    n.cols = 1;
    n.requires_grad = na.requires_grad;
    return push(std::move(n));
  }

  void eval_node(const Node& n, Tensor& out, std::span<const Tensor> inputs, std::span<const Tensor> params) {
    using detail::as_array;
    using detail::as_matrix;
    switch (n.op) {
      case OpKind::Input:
        std::copy(inputs[n.slot].data().begin(), inputs[n.slot].data().end(), out.data().begin());
        return;
      case OpKind::Parameter:
        std::copy(params[n.slot].data().begin(), params[n.slot].data().end(), out.data().begin());
        return;
      case OpKind::MatMul:
        as_matrix(out).noalias() = as_matrix(values_[n.a]) * as_matrix(values_[n.b]);
        return;
      case OpKind::Add:
        as_array(out) = as_array(values_[n.a]) + as_array(values_[n.b]);
        return;
      case OpKind::AddRow:
        as_matrix(out) = as_matrix(values_[n.a]).rowwise() + as_matrix(values_[n.b]).row(0);
        return;
      case OpKind::Sub:
        as_array(out) = as_array(values_[n.a]) - as_array(values_[n.b]);
        return;
      case OpKind::Mul:
        as_array(out) = as_array(values_[n.a]) * as_array(values_[n.b]);
        return;
      case OpKind::Scale:
        as_array(out) = n.scalar * as_array(values_[n.a]);
        return;
      case OpKind::AddScalar:
        as_array(out) = as_array(values_[n.a]) + n.scalar;
        return;
      case OpKind::Tanh:
        detail::tanh_into(values_[n.a], out);
        return;
      case OpKind::Square:
        as_array(out) = as_array(values_[n.a]).square();
        return;
      case OpKind::SliceRows: {
        const Tensor& src = values_[n.a];
        const auto first = src.data().begin() + std::ptrdiff_t(n.offset * n.cols);
        std::copy(first, first + std::ptrdiff_t(n.rows * n.cols), out.data().begin());
        return;
      }
      case OpKind::Sum:
        out[0] = as_array(values_[n.a]).sum();
        return;
      case OpKind::Mean:
        out[0] = as_array(values_[n.a]).sum() / double(values_[n.a].size());
        return;
    }
  }

  void backprop_node(std::size_t i) {
    using detail::as_array;
    using detail::as_matrix;
    const Node& n = nodes_[i];
    const Tensor& g = grads_[i];
    auto wants = [&](std::size_t id) { return id != npos && nodes_[id].requires_grad; };
    switch (n.op) {
      case OpKind::Input:
      case OpKind::Parameter:
        return;
      case OpKind::MatMul:
        if (wants(n.a)) as_matrix(grads_[n.a]).noalias() += as_matrix(g) * as_matrix(values_[n.b]).transpose();
        if (wants(n.b)) as_matrix(grads_[n.b]).noalias() += as_matrix(values_[n.a]).transpose() * as_matrix(g);
        return;
      case OpKind::Add:
        if (wants(n.a)) as_array(grads_[n.a]) += as_array(g);
        if (wants(n.b)) as_array(grads_[n.b]) += as_array(g);
        return;
      case OpKind::AddRow:
        if (wants(n.a)) as_array(grads_[n.a]) += as_array(g);
        if (wants(n.b)) as_matrix(grads_[n.b]).row(0) += as_matrix(g).colwise().sum();
        return;
      case OpKind::Sub:
        if (wants(n.a)) as_array(grads_[n.a]) += as_array(g);
        if (wants(n.b)) as_array(grads_[n.b]) -= as_array(g);
        return;
      case OpKind::Mul:
        if (wants(n.a)) as_array(grads_[n.a]) += as_array(g) * as_array(values_[n.b]);
        if (wants(n.b)) as_array(grads_[n.b]) += as_array(g) * as_array(values_[n.a]);
        return;
      case OpKind::Scale:
        if (wants(n.a)) as_array(grads_[n.a]) += n.scalar * as_array(g);
        return;
      case OpKind::AddScalar:
        if (wants(n.a)) as_array(grads_[n.a]) += as_array(g);
        return;
      case OpKind::Tanh:
        if (wants(n.a)) {
          const auto y = as_array(values_[i]);
          as_array(grads_[n.a]) += as_array(g) * (1.0 - y.square());
        }
        return;
      case OpKind::Square:
        if (wants(n.a)) as_array(grads_[n.a]) += 2.0 * as_array(g) * as_array(values_[n.a]);
        return;
      case OpKind::SliceRows:
        if (wants(n.a)) {
          auto dst = grads_[n.a].data().subspan(n.offset * n.cols, n.rows * n.cols);
          const auto src = g.data();
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
        return;
      case OpKind::Sum:
        if (wants(n.a)) as_array(grads_[n.a]) += g[0];
        return;
      case OpKind::Mean:
        if (wants(n.a)) as_array(grads_[n.a]) += g[0] / double(grads_[n.a].size());
        return;
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> input_ids_;
  std::vector<std::size_t> param_ids_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  bool forwarded_ = false;
  bool backwarded_ = false;
};

// Expression sugar so the same generic code (e.g. PDE residuals) can run on
// doubles and on tape variables.

inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator*(double s, Var a) { return a.tape->scale(a, s); }
inline Var operator*(Var a, double s) { return a.tape->scale(a, s); }
inline Var operator-(Var a) { return a.tape->scale(a, -1.0); }
inline Var operator+(Var a, double s) { return a.tape->add_scalar(a, s); }
inline Var operator+(double s, Var a) { return a.tape->add_scalar(a, s); }
inline Var operator-(double s, Var a) { return a.tape->add_scalar(a.tape->scale(a, -1.0), s); }
inline Var operator-(Var a, double s) { return a.tape->add_scalar(a, -s); }
inline Var tanh(Var a) { return a.tape->tanh(a); }
inline Var square(Var a) { return a.tape->square(a); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }

}  // namespace kdgm
