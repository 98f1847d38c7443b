#pragma once

// Gated DGM network. Weights use the row-vector convention: a batch of
// inputs is a (batch x input_dim) matrix X and a dense layer is X * W + b with
// W of shape (fan_in x fan_out).
//
//   S1      = tanh(X W1 + b1)
//   Z_l     = tanh(X Uz_l + S_l Wz_l + bz_l)
//   G_l     = tanh(X Ug_l + S_l Wg_l + bg_l)
//   R_l     = tanh(X Ur_l + S_l Wr_l + br_l)
//   H_l     = tanh(X Uh_l + (S_l ⊙ R_l) Wh_l + bh_l)
//   S_{l+1} = (1 - G_l) ⊙ H_l + Z_l ⊙ S_l
//   f       = S_{L+1} W + b
//
// The H gate gets its own bias bh_l rather than reusing br_l.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "kdgm/autodiff.hpp"
#include "kdgm/error.hpp"
#include "kdgm/tensor.hpp"

namespace kdgm {

struct NetworkShape {
  std::size_t input_dim = 0;
  std::size_t width = 50;
  std::size_t layers = 3;

  void validate() const {
    if (input_dim == 0) throw ConfigError("NetworkShape: input_dim must be positive");
    if (width == 0) throw ConfigError("NetworkShape: width must be positive");
  }

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

struct BlockSpec {
  std::string name;
  std::size_t rows;
  std::size_t cols;
};

/// Parameter blocks in their canonical order (also the on-disk order).
inline std::vector<BlockSpec> parameter_layout(const NetworkShape& shape) {
  const std::size_t d = shape.input_dim;
  const std::size_t m = shape.width;
  std::vector<BlockSpec> out;
  out.push_back({"W1", d, m});
  out.push_back({"b1", 1, m});
  for (std::size_t l = 1; l <= shape.layers; ++l) {
    for (const char* gate : {"z", "g", "r", "h"}) {
      const std::string suffix = std::string(gate) + std::to_string(l);
      out.push_back({"U" + suffix, d, m});
      out.push_back({"W" + suffix, m, m});
      out.push_back({"b" + suffix, 1, m});
    }
  }
  out.push_back({"W", m, 1});
  out.push_back({"b", 1, 1});
  return out;
}

/// d*M + M for the input layer, 4*(d*M + M*M + M) per gated layer, M + 1 for the output.
inline std::size_t parameter_count(const NetworkShape& shape) {
  const std::size_t d = shape.input_dim;
  const std::size_t m = shape.width;
  return d * m + m + shape.layers * 4 * (d * m + m * m + m) + m + 1;
}

struct NetworkParams {
  NetworkShape shape;
  std::vector<Tensor> blocks;

  std::vector<std::string> block_names() const {
    std::vector<std::string> names;
    for (auto& b : parameter_layout(shape)) names.push_back(b.name);
    return names;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
  }

  void validate() const {
    shape.validate();
    const auto layout = parameter_layout(shape);
    if (layout.size() != blocks.size()) {
      throw ShapeError("NetworkParams: expected " + std::to_string(layout.size()) + " blocks, found " +
                       std::to_string(blocks.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (blocks[i].rows() != layout[i].rows || blocks[i].cols() != layout[i].cols) {
        throw ShapeError("NetworkParams: block " + layout[i].name + " has shape " +
                         shape_string(blocks[i].shape()));
      }
      if (!blocks[i].all_finite()) throw NumericError("NetworkParams: block " + layout[i].name + " is not finite");
    }
  }

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

inline NetworkParams zero_params(const NetworkShape& shape) {
  shape.validate();
  NetworkParams p{shape, {}};
  for (const auto& b : parameter_layout(shape)) p.blocks.push_back(Tensor::matrix(b.rows, b.cols));
  return p;
}

/// Xavier-uniform weights in ±sqrt(6 / (fan_in + fan_out)); biases zero.
inline NetworkParams init_xavier(const NetworkShape& shape, std::uint64_t seed) {
  NetworkParams p = zero_params(shape);
  std::mt19937_64 rng(seed);
  const auto layout = parameter_layout(shape);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].name[0] == 'b') continue;
    const double bound = std::sqrt(6.0 / double(layout[i].rows + layout[i].cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.blocks[i].data()) w = dist(rng);
  }
  return p;
}

/// Returns parameters g with g(t, rest) == f(t + shift, rest): the time row
/// of every input matrix (W1 and each U) is folded into its bias.
inline NetworkParams shift_time_input(NetworkParams p, double shift) {
  p.validate();
  const std::size_t m = p.shape.width;
  auto fold = [&](std::size_t mat, std::size_t bias) {
    for (std::size_t c = 0; c < m; ++c) p.blocks[bias](0, c) += shift * p.blocks[mat](0, c);
  };
  fold(0, 1);
  for (std::size_t k = 2; k + 2 < p.blocks.size() - 2; k += 3) fold(k, k + 2);
  return p;
}

/// Registers the network parameters on `tape` in canonical order.
inline std::vector<Var> register_parameters(Tape& tape, const NetworkShape& shape) {
  std::vector<Var> vars;
  for (const auto& b : parameter_layout(shape)) vars.push_back(tape.parameter(b.name, b.rows, b.cols));
  return vars;
}

/// Appends the network applied to `x` (batch x input_dim) and returns the (batch x 1) output.
inline Var network_output(Tape& tape, std::span<const Var> p, Var x, const NetworkShape& shape) {
  std::size_t k = 0;
  auto dense = [&](Var in, Var w) { return tape.matmul(in, w); };
  Var s = tape.tanh(tape.add_row(dense(x, p[0]), p[1]));
  k = 2;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    auto gate = [&](Var state, std::size_t base) {
      return tape.tanh(tape.add_row(tape.add(dense(x, p[base]), dense(state, p[base + 1])), p[base + 2]));
    };
    Var z = gate(s, k);
    Var g = gate(s, k + 3);
    Var r = gate(s, k + 6);
    Var h = gate(tape.mul(s, r), k + 9);
    s = tape.add(tape.mul(1.0 - g, h), tape.mul(z, s));
    k += 12;
  }
  return tape.add_row(dense(s, p[k]), p[k + 1]);
}

/// Batched evaluation: one output per row of `points` (rows x input_dim).
inline std::vector<double> eval_batch(const NetworkParams& params, const Tensor& points) {
  if (points.rows() == 0) return {};
  if (points.cols() != params.shape.input_dim) {
    throw ShapeError("eval: input has " + std::to_string(points.cols()) + " columns, network expects " +
                     std::to_string(params.shape.input_dim));
  }
  Tape tape;
  Var x = tape.input("x", points.rows(), points.cols());
  auto p = register_parameters(tape, params.shape);
  Var out = network_output(tape, p, x, params.shape);
  tape.forward(std::span<const Tensor>(&points, 1), params.blocks);
  const auto& v = tape.value(out).storage();
  return {v.begin(), v.end()};
}

inline double eval(const NetworkParams& params, std::span<const double> input) {
  if (input.size() != params.shape.input_dim) {
    throw ShapeError("eval: input length " + std::to_string(input.size()) + " but network expects " +
                     std::to_string(params.shape.input_dim));
  }
  Tensor x(Shape{1, input.size()}, std::vector<double>(input.begin(), input.end()));
  return eval_batch(params, x)[0];
}

/// Which input derivatives to form by central differences.
struct DerivativeRequest {
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  std::vector<std::pair<std::size_t, std::size_t>> cross;
};

struct InputDerivatives {
  double value = 0.0;
  std::vector<double> first;   // aligned with DerivativeRequest::first
  std::vector<double> second;  // aligned with DerivativeRequest::second
  std::vector<double> cross;   // aligned with DerivativeRequest::cross
};

namespace detail {

/// Stencil points for `req` around `x`; the centre point comes first.
inline std::vector<std::vector<double>> derivative_stencil(std::span<const double> x, const DerivativeRequest& req,
                                                           double h) {
  std::vector<std::vector<double>> pts;
  const std::vector<double> centre(x.begin(), x.end());
  pts.push_back(centre);
  auto shifted = [&](std::size_t i, double di, std::size_t j, double dj) {
    auto p = centre;
    p[i] += di;
    if (j != Tape::npos) p[j] += dj;
    pts.push_back(std::move(p));
  };
  for (auto i : req.first) {
    shifted(i, h, Tape::npos, 0.0);
    shifted(i, -h, Tape::npos, 0.0);
  }
  for (auto i : req.second) {
    shifted(i, h, Tape::npos, 0.0);
    shifted(i, -h, Tape::npos, 0.0);
  }
  for (auto [i, j] : req.cross) {
    shifted(i, h, j, h);
    shifted(i, h, j, -h);
    shifted(i, -h, j, h);
    shifted(i, -h, j, -h);
  }
  return pts;
}

inline InputDerivatives combine_stencil(std::span<const double> f, const DerivativeRequest& req, double h) {
  InputDerivatives d;
  d.value = f[0];
  std::size_t k = 1;
  for (std::size_t n = 0; n < req.first.size(); ++n, k += 2) d.first.push_back((f[k] - f[k + 1]) / (2.0 * h));
  for (std::size_t n = 0; n < req.second.size(); ++n, k += 2) {
    d.second.push_back((f[k] - 2.0 * f[0] + f[k + 1]) / (h * h));
  }
  for (std::size_t n = 0; n < req.cross.size(); ++n, k += 4) {
    d.cross.push_back((f[k] - f[k + 1] - f[k + 2] + f[k + 3]) / (4.0 * h * h));
  }
  return d;
}

inline void check_request(std::size_t dim, const DerivativeRequest& req, double h) {
  if (!(h > 0.0)) throw ConfigError("input_derivs: fd_step must be positive");
  auto check = [&](std::size_t i) {
    if (i >= dim) throw ShapeError("input_derivs: coordinate " + std::to_string(i) + " out of range");
  };
  for (auto i : req.first) check(i);
  for (auto i : req.second) check(i);
  for (auto [i, j] : req.cross) {
    check(i);
    check(j);
  }
}

}  // namespace detail

/// Central-difference input derivatives of an arbitrary scalar function.
///
/// first: (f(x+h) - f(x-h)) / 2h; second: (f(x+h) - 2f(x) + f(x-h)) / h^2;
/// cross: (f(++) - f(+-) - f(-+) + f(--)) / 4h^2.
template <class Fn>
  requires std::is_invocable_r_v<double, Fn, std::span<const double>>
InputDerivatives input_derivs(Fn&& f, std::span<const double> x, const DerivativeRequest& req, double fd_step) {
  detail::check_request(x.size(), req, fd_step);
  const auto pts = detail::derivative_stencil(x, req, fd_step);
  std::vector<double> vals;
  vals.reserve(pts.size());
  for (const auto& p : pts) vals.push_back(f(std::span<const double>(p)));
  return detail::combine_stencil(vals, req, fd_step);
}

/// Same as above for a network; all stencil points go through one batched pass.
inline InputDerivatives input_derivs(const NetworkParams& params, std::span<const double> x,
                                     const DerivativeRequest& req, double fd_step) {
  if (x.size() != params.shape.input_dim) throw ShapeError("input_derivs: input length does not match network");
  detail::check_request(x.size(), req, fd_step);
  const auto pts = detail::derivative_stencil(x, req, fd_step);
  Tensor batch = Tensor::matrix(pts.size(), x.size());
  for (std::size_t r = 0; r < pts.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) batch(r, c) = pts[r][c];
  }
  const auto vals = eval_batch(params, batch);
  return detail::combine_stencil(vals, req, fd_step);
}

}  // namespace kdgm
