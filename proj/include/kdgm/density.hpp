#pragma once

// Transition densities from a learned CDF by central differencing in the
// terminal coordinates:
//   p(t, x; T, y)       ~ [C(y + D) - C(y - D)] / 2D
//   p(t, x, v; T, y, z) ~ [C(y+D, z+D) - C(y+D, z-D) - C(y-D, z+D) + C(y-D, z-D)] / 4D^2

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "kdgm/dgm_net.hpp"
#include "kdgm/error.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/trainer.hpp"

namespace kdgm {

struct DensityConfig {
  double delta = 0.005;
  bool clamp_negative = true;

  bool delta_recommended() const noexcept { return delta >= 0.001 && delta <= 0.01; }

  void validate() const {
    if (!(delta > 0.0)) throw ConfigError("DensityConfig: delta must be positive");
  }
};

/// Counters accumulated across density evaluations. Many clamp events
/// usually mean the CDF network is undertrained.
struct DensityStats {
  std::size_t evaluations = 0;
  std::size_t clamped = 0;
};

/// A CDF in some model's input layout: either a trained network or any
/// function (used to check the differencing against known CDFs).
class CdfSource {
 public:
  using BatchFn = std::function<std::vector<double>(const Tensor&)>;

  CdfSource(PdeModel model, BatchFn eval) : model_(std::move(model)), eval_(std::move(eval)) {}

  static CdfSource from_model(const TrainedModel& m) {
    return CdfSource(m.model, [params = m.params](const Tensor& pts) { return eval_batch(params, pts); });
  }

  template <class Fn>
    requires std::is_invocable_r_v<double, Fn, std::span<const double>>
  static CdfSource from_function(PdeModel model, Fn f) {
    return CdfSource(std::move(model), [f = std::move(f)](const Tensor& pts) {
      std::vector<double> out(pts.rows());
      for (std::size_t r = 0; r < pts.rows(); ++r) out[r] = f(std::span<const double>(&pts.data()[r * pts.cols()], pts.cols()));
      return out;
    });
  }

  const PdeModel& model() const noexcept { return model_; }
  std::vector<double> operator()(const Tensor& pts) const { return eval_(pts); }

 private:
  PdeModel model_;
  BatchFn eval_;
};

namespace detail {

/// Network time input for a query starting at t with maturity T.
inline double network_time(const PdeModel& m, double t, double T) {
  const double H = m.domain().horizon();
  const double tau = T - t;
  if (!(tau > 0.0)) throw DomainError("density: maturity T must exceed start time t");
  if (m.time_homogeneous()) {
    if (tau > H + 1e-12) {
      throw DomainError("density: time to maturity " + std::to_string(tau) + " exceeds the trained horizon " +
                        std::to_string(H) + "; retrain or transfer-learn onto a longer horizon");
    }
    return std::max(0.0, H - tau);
  }
  if (std::abs(T - H) > 1e-12) {
    throw DomainError("density: " + m.name() + " is not time-homogeneous; T must equal the trained horizon " +
                      std::to_string(H));
  }
  return t;
}

inline void require_in_domain(const PdeModel& m, std::span<const double> p) {
  if (!m.domain().contains(p, 1e-12)) {
    std::string s = "(";
    for (std::size_t i = 0; i < p.size(); ++i) s += (i ? ", " : "") + m.layout()[i] + "=" + std::to_string(p[i]);
    throw DomainError("density: query " + s + ") lies outside the trained domain; transfer-learn onto a domain " +
                      "that covers it");
  }
}

inline double finish(double raw, const DensityConfig& cfg, DensityStats* stats) {
  if (stats) ++stats->evaluations;
  if (raw < 0.0 && cfg.clamp_negative) {
    if (stats) ++stats->clamped;
    return 0.0;
  }
  return raw;
}

}  // namespace detail

/// Density in y on a grid of terminal points, one CDF batch for the whole grid.
inline std::vector<double> density_1d_grid(const CdfSource& cdf, double t, double x, double T, double sigma,
                                           std::span<const double> ys, const DensityConfig& cfg = {},
                                           DensityStats* stats = nullptr) {
  cfg.validate();
  const PdeModel& m = cdf.model();
  if (m.kind() != ModelKind::Gbm) throw ConfigError("density_1d: model layout mismatch, got " + m.name());
  const double tn = detail::network_time(m, t, T);
  const double D = cfg.delta;
  Tensor pts = Tensor::matrix(2 * ys.size(), m.input_dim());
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const auto up = m.gbm_input(tn, x, ys[i] + D, sigma);
    const auto dn = m.gbm_input(tn, x, ys[i] - D, sigma);
    detail::require_in_domain(m, up);
    detail::require_in_domain(m, dn);
    for (std::size_t c = 0; c < up.size(); ++c) {
      pts(2 * i, c) = up[c];
      pts(2 * i + 1, c) = dn[c];
    }
  }
  const auto f = cdf(pts);
  std::vector<double> out(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) out[i] = detail::finish((f[2 * i] - f[2 * i + 1]) / (2.0 * D), cfg, stats);
  return out;
}

inline double density_1d(const CdfSource& cdf, double t, double x, double T, double y, double sigma,
                         const DensityConfig& cfg = {}, DensityStats* stats = nullptr) {
  return density_1d_grid(cdf, t, x, T, sigma, std::span<const double>(&y, 1), cfg, stats)[0];
}

inline double density_1d(const TrainedModel& model, double t, double x, double T, double y, double sigma,
                         const DensityConfig& cfg = {}, DensityStats* stats = nullptr) {
  return density_1d(CdfSource::from_model(model), t, x, T, y, sigma, cfg, stats);
}

/// Joint density on ys x zs (row-major in y) by the 4-point mixed stencil.
inline std::vector<double> density_2d_grid(const CdfSource& cdf, double t, double x, double v, double T,
                                           std::span<const double> ys, std::span<const double> zs,
                                           const HestonParams& params, const DensityConfig& cfg = {},
                                           DensityStats* stats = nullptr) {
  cfg.validate();
  const PdeModel& m = cdf.model();
  if (!m.two_factor()) throw ConfigError("density_2d: model layout mismatch, got " + m.name());
  const double tn = detail::network_time(m, t, T);
  const double D = cfg.delta;
  const std::size_t ny = ys.size(), nz = zs.size();
  Tensor pts = Tensor::matrix(4 * ny * nz, m.input_dim());
  const double sy[4] = {D, D, -D, -D};
  const double sz[4] = {D, -D, D, -D};
  for (std::size_t i = 0; i < ny; ++i) {
    for (std::size_t j = 0; j < nz; ++j) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double y = ys[i] + sy[k];
        const double z = zs[j] + sz[k];
        const auto p = m.kind() == ModelKind::Heston ? m.heston_input(tn, x, y, v, z, params)
                                                     : m.td_heston_input(tn, x, y, v, z);
        detail::require_in_domain(m, p);
        const std::size_t row = 4 * (i * nz + j) + k;
        for (std::size_t c = 0; c < p.size(); ++c) pts(row, c) = p[c];
      }
    }
  }
  const auto f = cdf(pts);
  std::vector<double> out(ny * nz);
  for (std::size_t q = 0; q < ny * nz; ++q) {
    const double raw = (f[4 * q] - f[4 * q + 1] - f[4 * q + 2] + f[4 * q + 3]) / (4.0 * D * D);
    out[q] = detail::finish(raw, cfg, stats);
  }
  return out;
}

inline double density_2d(const CdfSource& cdf, double t, double x, double v, double T, double y, double z,
                         const HestonParams& params, const DensityConfig& cfg = {}, DensityStats* stats = nullptr) {
  return density_2d_grid(cdf, t, x, v, T, std::span<const double>(&y, 1), std::span<const double>(&z, 1), params, cfg,
                         stats)[0];
}

inline double density_2d(const TrainedModel& model, double t, double x, double v, double T, double y, double z,
                         const HestonParams& params, const DensityConfig& cfg = {}, DensityStats* stats = nullptr) {
  return density_2d(CdfSource::from_model(model), t, x, v, T, y, z, params, cfg, stats);
}

}  // namespace kdgm
