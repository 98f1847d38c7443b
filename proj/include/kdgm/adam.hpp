#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdgm/error.hpp"
#include "kdgm/tensor.hpp"

namespace kdgm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool bias_correction = true;
};

/// First/second moment estimates, one tensor per parameter block.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState zeros_like(std::span<const Tensor> params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
      s.m.emplace_back(p.shape());
      s.v.emplace_back(p.shape());
    }
    return s;
  }
};

/// One ADAM update of `params` in place.
///
/// With bias correction the step is lr * m_hat / (sqrt(v_hat) + eps) where
/// m_hat = m / (1 - beta1^t) and v_hat = v / (1 - beta2^t).
inline void adam_step(std::vector<Tensor>& params, std::span<const Tensor> grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}, std::span<const std::string> block_names = {}) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam_step: learning rate must be positive");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: params, grads and state have different block counts");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (!grads[b].same_shape(params[b]) || !state.m[b].same_shape(params[b]) || !state.v[b].same_shape(params[b])) {
      throw ShapeError("adam_step: shape mismatch in parameter block " + std::to_string(b));
    }
    if (!grads[b].all_finite()) {
      const std::string label = b < block_names.size() ? block_names[b] : std::to_string(b);
      throw NumericError("adam_step: non-finite gradient in parameter block " + label);
    }
  }

  ++state.step;
  const double t = double(state.step);
  const double c1 = cfg.bias_correction ? 1.0 - std::pow(cfg.beta1, t) : 1.0;
  const double c2 = cfg.bias_correction ? 1.0 - std::pow(cfg.beta2, t) : 1.0;

  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].data();
    const auto g = grads[b].data();
    auto m = state.m[b].data();
    auto v = state.v[b].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace kdgm
