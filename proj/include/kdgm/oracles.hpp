#pragma once

// Independent reference engines: closed-form Gaussian transition density and
// Black-Scholes prices (zero rates, forward measure), plus a full-truncation
// Euler simulator for the Heston family.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "kdgm/error.hpp"
#include "kdgm/pde_models.hpp"

namespace kdgm {

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0xD6E8FEB86659FD93ull));
}

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// p(0, x; T, y) for dX = -sigma^2/2 dt + sigma dW, i.e. y ~ N(x - sigma^2 T / 2, sigma^2 T).
inline double gaussian_density(double x, double T, double y, double sigma) {
  const double s2t = sigma * sigma * T;
  const double u = y - x + 0.5 * s2t;
  return std::exp(-u * u / (2.0 * s2t)) / std::sqrt(2.0 * std::numbers::pi * s2t);
}

/// C(t, x; T, y) = Phi((y - x + sigma^2 tau / 2) / (sigma sqrt(tau))), tau = T - t.
inline double gbm_cdf(double tau, double x, double y, double sigma) {
  return normal_cdf((y - x + 0.5 * sigma * sigma * tau) / (sigma * std::sqrt(tau)));
}

/// Analytic dC/dt, dC/dx, d2C/dx2 of gbm_cdf at time-to-maturity tau.
inline ModelDerivs<double> gbm_cdf_derivatives(double tau, double x, double y, double sigma) {
  const double s = sigma * std::sqrt(tau);
  const double d = (y - x + 0.5 * sigma * sigma * tau) / s;
  const double phi = normal_pdf(d);
  // dd/dtau = sigma^2 / (2 s) - d / (2 tau); t enters through tau = T - t.
  const double dd_dtau = 0.5 * sigma * sigma / s - 0.5 * d / tau;
  ModelDerivs<double> r;
  r.t = -phi * dd_dtau;
  r.x = -phi / s;
  r.xx = -d * phi / (s * s);
  return r;
}

enum class OptionType { Call, Put };

inline std::string option_type_name(OptionType t) { return t == OptionType::Call ? "call" : "put"; }

/// Zero-rate Black-Scholes price.
inline double bs_price(double S0, double K, double sigma, double T, OptionType type) {
  if (!(S0 > 0.0) || !(K > 0.0) || !(sigma > 0.0) || !(T > 0.0)) {
    throw ConfigError("bs_price: S0, K, sigma and T must be positive");
  }
  const double s = sigma * std::sqrt(T);
  const double d1 = (std::log(S0 / K) + 0.5 * s * s) / s;
  const double d2 = d1 - s;
  if (type == OptionType::Call) return S0 * normal_cdf(d1) - K * normal_cdf(d2);
  return K * normal_cdf(-d2) - S0 * normal_cdf(-d1);
}

struct McConfig {
  std::size_t paths = 100000;
  std::size_t steps_per_year = 250;
  std::uint64_t seed = 1;

  void validate() const {
    if (paths < 10000) throw ConfigError("McConfig: at least 10^4 paths required");
    if (steps_per_year < 100) throw ConfigError("McConfig: at least 100 steps per year required");
  }
};

/// Terminal samples (X_T, V_T), one entry per path.
struct McSamples {
  std::vector<double> x;
  std::vector<double> v;
};

namespace detail {

template <class ParamsAt>
McSamples simulate_heston(double x0, double v0, double T, const McConfig& cfg, ParamsAt&& params_at) {
  cfg.validate();
  if (!(T > 0.0)) throw ConfigError("heston_mc: T must be positive");
  if (v0 < 0.0) throw ConfigError("heston_mc: v0 must be non-negative");
  const std::size_t steps = std::max<std::size_t>(1, std::size_t(std::ceil(T * double(cfg.steps_per_year) - 1e-9)));
  const double dt = T / double(steps);
  const double sqrt_dt = std::sqrt(dt);

  // Parameters are piecewise constant, so look them up once per step at the step midpoint.
  std::vector<HestonParams> per_step(steps);
  for (std::size_t k = 0; k < steps; ++k) per_step[k] = params_at((double(k) + 0.5) * dt);

  McSamples out;
  out.x.resize(cfg.paths);
  out.v.resize(cfg.paths);
  std::normal_distribution<double> normal;
  for (std::size_t p = 0; p < cfg.paths; ++p) {
    std::mt19937_64 rng(mix_seed(cfg.seed, p));
    normal.reset();
    double x = x0;
    double v = v0;
    for (std::size_t k = 0; k < steps; ++k) {
      const HestonParams& hp = per_step[k];
      const double z1 = normal(rng);
      const double z2 = normal(rng);
      const double zv = hp.rho * z1 + std::sqrt(1.0 - hp.rho * hp.rho) * z2;
      const double vp = std::max(v, 0.0);
      const double sv = std::sqrt(vp);
      x += -0.5 * vp * dt + sv * sqrt_dt * z1;
      v += hp.kappa * (hp.theta - vp) * dt + hp.xi * sv * sqrt_dt * zv;
    }
    out.x[p] = x;
    out.v[p] = v;
  }
  return out;
}

}  // namespace detail

/// Full-truncation Euler for dX = -V/2 dt + sqrt(V) dW^X,
/// dV = kappa(theta - V) dt + xi sqrt(V) dW^V, d<W^X, W^V> = rho dt.
/// Path p draws from its own stream keyed by (seed, p).
inline McSamples heston_mc(double x0, double v0, const HestonParams& params, double T, const McConfig& cfg) {
  return detail::simulate_heston(x0, v0, T, cfg, [&](double) { return params; });
}

/// Time-dependent variant: theta, xi, rho follow `schedule` in calendar time from 0.
inline McSamples heston_mc(double x0, double v0, double kappa, const PiecewiseSchedule& schedule, double T,
                           const McConfig& cfg) {
  if (T > schedule.end() + 1e-12) throw DomainError("heston_mc: maturity beyond the schedule");
  return detail::simulate_heston(x0, v0, T, cfg, [&](double t) {
    const auto s = schedule.at(t);
    return HestonParams{kappa, s.theta, s.xi, s.rho};
  });
}

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo mean of payoff(exp(X_T)) with its standard error.
template <class Payoff>
McEstimate mc_price(std::span<const double> log_prices, Payoff&& payoff) {
  if (log_prices.empty()) throw ConfigError("mc_price: empty sample set");
  double sum = 0.0;
  double sum2 = 0.0;
  for (double x : log_prices) {
    const double h = payoff(std::exp(x));
    sum += h;
    sum2 += h * h;
  }
  const double n = double(log_prices.size());
  const double mean = sum / n;
  const double var = std::max(0.0, sum2 / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

/// Fraction of samples <= q for each query.
inline std::vector<double> empirical_cdf(std::span<const double> samples, std::span<const double> queries) {
  if (samples.empty()) throw ConfigError("empirical_cdf: empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(queries.size());
  for (double q : queries) {
    auto it = std::upper_bound(sorted.begin(), sorted.end(), q);
    out.push_back(double(it - sorted.begin()) / double(sorted.size()));
  }
  return out;
}

/// Cell boundaries around ascending grid nodes: midpoints inside, mirrored half-cells at the ends.
inline std::vector<double> grid_cell_edges(std::span<const double> grid) {
  if (grid.size() < 2) throw ConfigError("grid_cell_edges: need at least two grid nodes");
  std::vector<double> e(grid.size() + 1);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw ConfigError("grid_cell_edges: grid must be ascending");
    e[i] = 0.5 * (grid[i - 1] + grid[i]);
  }
  e.front() = grid.front() - (e[1] - grid.front());
  e.back() = grid.back() + (grid.back() - e[grid.size() - 1]);
  return e;
}

/// Histogram density: the fraction of samples in each node's cell divided by the cell width.
inline std::vector<double> empirical_density(std::span<const double> samples, std::span<const double> grid) {
  if (samples.empty()) throw ConfigError("empirical_density: empty sample set");
  const auto edges = grid_cell_edges(grid);
  std::vector<double> counts(grid.size(), 0.0);
  for (double s : samples) {
    auto it = std::upper_bound(edges.begin(), edges.end(), s);
    if (it == edges.begin() || it == edges.end()) continue;
    counts[std::size_t(it - edges.begin()) - 1] += 1.0;
  }
  const double n = double(samples.size());
  for (std::size_t i = 0; i < grid.size(); ++i) counts[i] /= n * (edges[i + 1] - edges[i]);
  return counts;
}

/// Joint histogram density of (x, v) samples on a ygrid x zgrid mesh, row-major in y.
inline std::vector<double> empirical_density_2d(std::span<const double> xs, std::span<const double> vs,
                                                std::span<const double> ygrid, std::span<const double> zgrid) {
  if (xs.empty() || xs.size() != vs.size()) throw ConfigError("empirical_density_2d: empty or mismatched samples");
  const auto ey = grid_cell_edges(ygrid);
  const auto ez = grid_cell_edges(zgrid);
  const std::size_t nz = zgrid.size();
  std::vector<double> counts(ygrid.size() * nz, 0.0);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    auto iy = std::upper_bound(ey.begin(), ey.end(), xs[k]);
    auto iz = std::upper_bound(ez.begin(), ez.end(), vs[k]);
    if (iy == ey.begin() || iy == ey.end() || iz == ez.begin() || iz == ez.end()) continue;
    counts[(std::size_t(iy - ey.begin()) - 1) * nz + std::size_t(iz - ez.begin()) - 1] += 1.0;
  }
  const double n = double(xs.size());
  for (std::size_t i = 0; i < ygrid.size(); ++i) {
    for (std::size_t j = 0; j < nz; ++j) counts[i * nz + j] /= n * (ey[i + 1] - ey[i]) * (ez[j + 1] - ez[j]);
  }
  return counts;
}

/// Kolmogorov-Smirnov distance between the samples' ECDF and a reference CDF.
template <class Cdf>
double ks_distance(std::span<const double> samples, Cdf&& cdf) {
  if (samples.empty()) throw ConfigError("ks_distance: empty sample set");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = double(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = cdf(sorted[i]);
    d = std::max({d, double(i + 1) / n - f, f - double(i) / n});
  }
  return d;
}

}  // namespace kdgm
