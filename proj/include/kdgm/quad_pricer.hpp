#pragma once

// European option prices by quadrature of payoff x transition density:
//   V(0, S0) = int f(e^y) p(0, x0; T, y) dy,  x0 = ln S0
// and, for two-factor models, the same integral against the joint density
// over (y, z). Composite Simpson's rule on a truncated mesh.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdgm/density.hpp"
#include "kdgm/error.hpp"
#include "kdgm/oracles.hpp"
#include "kdgm/pde_models.hpp"

namespace kdgm {

class Payoff {
 public:
  enum class Kind { Call, Put, Constant, Tabulated };

  static Payoff call(double K) { return Payoff(Kind::Call, K); }
  static Payoff put(double K) { return Payoff(Kind::Put, K); }
  static Payoff constant(double c) { return Payoff(Kind::Constant, c); }
  static Payoff option(OptionType type, double K) { return type == OptionType::Call ? call(K) : put(K); }

  /// Piecewise-linear in S through (spots[i], values[i]), flat beyond the ends.
  static Payoff tabulated(std::vector<double> spots, std::vector<double> values) {
    if (spots.size() < 2 || spots.size() != values.size()) {
      throw ConfigError("Payoff: tabulated payoff needs at least two (spot, value) pairs of equal length");
    }
    for (std::size_t i = 1; i < spots.size(); ++i) {
      if (!(spots[i] > spots[i - 1])) throw ConfigError("Payoff: tabulated spots must be strictly ascending");
    }
    Payoff p(Kind::Tabulated, 0.0);
    p.spots_ = std::move(spots);
    p.values_ = std::move(values);
    return p;
  }

  Kind kind() const noexcept { return kind_; }
  double strike() const noexcept { return k_; }

  /// Log-strike where the payoff has its kink, if it has one.
  std::optional<double> log_kink() const {
    if (kind_ == Kind::Call || kind_ == Kind::Put) return std::log(k_);
    return std::nullopt;
  }

  double operator()(double S) const {
    switch (kind_) {
      case Kind::Call: return std::max(S - k_, 0.0);
      case Kind::Put: return std::max(k_ - S, 0.0);
      case Kind::Constant: return k_;
      case Kind::Tabulated: {
        if (S <= spots_.front()) return values_.front();
        if (S >= spots_.back()) return values_.back();
        const auto it = std::upper_bound(spots_.begin(), spots_.end(), S);
        const std::size_t i = std::size_t(it - spots_.begin());
        const double w = (S - spots_[i - 1]) / (spots_[i] - spots_[i - 1]);
        return (1.0 - w) * values_[i - 1] + w * values_[i];
      }
    }
    return 0.0;
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::Call: return "call K=" + std::to_string(k_);
      case Kind::Put: return "put K=" + std::to_string(k_);
      case Kind::Constant: return "constant " + std::to_string(k_);
      case Kind::Tabulated: return "tabulated (" + std::to_string(spots_.size()) + " nodes)";
    }
    return {};
  }

 private:
  Payoff(Kind kind, double k) : kind_(kind), k_(k) {
    if ((kind == Kind::Call || kind == Kind::Put) && !(k > 0.0)) throw ConfigError("Payoff: strike K must be positive");
  }

  Kind kind_;
  double k_;
  std::vector<double> spots_;
  std::vector<double> values_;
};

struct QuadSpec {
  std::size_t mesh_points = 51;
  double q = 6.0;                      // truncation half-width in log-price standard deviations
  std::optional<Interval> y_bounds;    // explicit log-price range, overrides q
  std::optional<Interval> z_bounds;    // explicit variance range for two-factor pricing
  Payoff payoff = Payoff::call(1.0);
  double S0 = 1.0;
  double T = 1.0;
  // Start (end) a call (put) mesh at the log-strike so the kink is a mesh node.
  bool align_to_strike = true;
  // Shrink the range to what the engine supports instead of failing.
  bool clip_to_engine = false;

  void validate() const {
    if (mesh_points < 3 || mesh_points % 2 == 0) throw ConfigError("QuadSpec: mesh_points must be odd and >= 3");
    if (!(q > 0.0)) throw ConfigError("QuadSpec: q must be positive");
    if (!(S0 > 0.0)) throw ConfigError("QuadSpec: S0 must be positive");
    if (!(T > 0.0)) throw ConfigError("QuadSpec: T must be positive");
    if (y_bounds && !(y_bounds->hi > y_bounds->lo)) throw ConfigError("QuadSpec: y_bounds must have lo < hi");
    if (z_bounds && !(z_bounds->hi > z_bounds->lo)) throw ConfigError("QuadSpec: z_bounds must have lo < hi");
  }
};

/// Composite Simpson nodes and weights on [a, b] with n (odd) points.
struct SimpsonRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline SimpsonRule simpson_rule(double a, double b, std::size_t n) {
  if (n < 3 || n % 2 == 0) throw ConfigError("simpson_rule: n must be odd and >= 3");
  SimpsonRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  const double h = (b - a) / double(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    r.nodes[i] = a + h * double(i);
    r.weights[i] = (i == 0 || i == n - 1 ? 1.0 : (i % 2 ? 4.0 : 2.0)) * h / 3.0;
  }
  r.nodes.back() = b;
  return r;
}

/// Source of transition densities started at t = 0.
class DensityEngine {
 public:
  virtual ~DensityEngine() = default;
  virtual std::string name() const = 0;

  /// p(0, x0; T, y) for each y.
  virtual std::vector<double> density_1d(double x0, double T, double sigma, std::span<const double> ys) const {
    (void)x0, (void)T, (void)sigma, (void)ys;
    throw ConfigError(name() + " engine has no one-factor density");
  }

  /// p(0, x0, v0; T, y, z) on ys x zs, row-major in y.
  virtual std::vector<double> density_2d(double x0, double v0, double T, const HestonParams& p,
                                         std::span<const double> ys, std::span<const double> zs) const {
    (void)x0, (void)v0, (void)T, (void)p, (void)ys, (void)zs;
    throw ConfigError(name() + " engine has no two-factor density");
  }

  /// Terminal log-price range the engine can evaluate, if limited.
  virtual std::optional<Interval> y_range() const { return std::nullopt; }
  /// Terminal variance range; two-factor engines must provide one unless the QuadSpec does.
  virtual std::optional<Interval> z_range() const { return std::nullopt; }
};

class GaussianEngine final : public DensityEngine {
 public:
  std::string name() const override { return "gaussian"; }

  std::vector<double> density_1d(double x0, double T, double sigma, std::span<const double> ys) const override {
    if (!(sigma > 0.0) || !(T > 0.0)) throw DomainError("gaussian engine: sigma and T must be positive");
    std::vector<double> out(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) out[i] = gaussian_density(x0, T, ys[i], sigma);
    return out;
  }
};

/// Densities differenced from a trained (or hooked) CDF network.
class NetworkEngine final : public DensityEngine {
 public:
  explicit NetworkEngine(CdfSource cdf, DensityConfig cfg = {}) : cdf_(std::move(cdf)), cfg_(cfg) {}
  explicit NetworkEngine(const TrainedModel& m, DensityConfig cfg = {}) : NetworkEngine(CdfSource::from_model(m), cfg) {}

  std::string name() const override { return "network"; }
  const DensityStats& stats() const noexcept { return stats_; }
  const PdeModel& model() const noexcept { return cdf_.model(); }

  std::vector<double> density_1d(double x0, double T, double sigma, std::span<const double> ys) const override {
    return kdgm::density_1d_grid(cdf_, 0.0, x0, T, sigma, ys, cfg_, &stats_);
  }

  std::vector<double> density_2d(double x0, double v0, double T, const HestonParams& p, std::span<const double> ys,
                                 std::span<const double> zs) const override {
    return kdgm::density_2d_grid(cdf_, 0.0, x0, v0, T, ys, zs, p, cfg_, &stats_);
  }

  std::optional<Interval> y_range() const override { return shrunk(model().domain().bounds_of("y")); }

  std::optional<Interval> z_range() const override {
    if (!model().two_factor()) return std::nullopt;
    return shrunk(model().domain().bounds_of("z"));
  }

 private:
  Interval shrunk(const Interval& b) const { return {b.lo + cfg_.delta, b.hi - cfg_.delta}; }

  CdfSource cdf_;
  DensityConfig cfg_;
  mutable DensityStats stats_;
};

/// Histogram densities from simulated terminal samples. Valid only at the
/// maturity (and, for two-factor use, the parameters) they were drawn with.
class EmpiricalEngine final : public DensityEngine {
 public:
  EmpiricalEngine(McSamples samples, double x0, double T, std::optional<HestonParams> params = std::nullopt,
                  double v0 = 0.0)
      : samples_(std::move(samples)), x0_(x0), T_(T), params_(params), v0_(v0) {
    if (samples_.x.empty()) throw ConfigError("empirical engine: empty sample set");
  }

  std::string name() const override { return "empirical"; }

  std::vector<double> density_1d(double x0, double T, double sigma, std::span<const double> ys) const override {
    (void)sigma;
    check(x0, T);
    return empirical_density(samples_.x, ys);
  }

  std::vector<double> density_2d(double x0, double v0, double T, const HestonParams& p, std::span<const double> ys,
                                 std::span<const double> zs) const override {
    check(x0, T);
    if (samples_.v.size() != samples_.x.size()) throw ConfigError("empirical engine: no variance samples");
    if (params_) {
      const HestonParams& q = *params_;
      if (q.kappa != p.kappa || q.theta != p.theta || q.xi != p.xi || q.rho != p.rho || v0 != v0_) {
        throw DomainError("empirical engine: samples were drawn with different parameters");
      }
    }
    return empirical_density_2d(samples_.x, samples_.v, ys, zs);
  }

  std::optional<Interval> z_range() const override {
    if (samples_.v.empty()) return std::nullopt;
    return Interval{0.0, *std::max_element(samples_.v.begin(), samples_.v.end())};
  }

 private:
  void check(double x0, double T) const {
    if (std::abs(T - T_) > 1e-12 || std::abs(x0 - x0_) > 1e-12) {
      throw DomainError("empirical engine: samples were drawn for a different start point or maturity");
    }
  }

  McSamples samples_;
  double x0_;
  double T_;
  std::optional<HestonParams> params_;
  double v0_;
};

namespace detail {

inline Interval clip_range(Interval r, const std::optional<Interval>& engine, bool clip, const char* what) {
  if (!engine) return r;
  if (r.lo < engine->lo - 1e-12 || r.hi > engine->hi + 1e-12) {
    if (!clip) {
      throw DomainError(std::string("quadrature: ") + what + " range [" + std::to_string(r.lo) + ", " +
                        std::to_string(r.hi) + "] exceeds the engine range [" + std::to_string(engine->lo) + ", " +
                        std::to_string(engine->hi) + "]; enable clip_to_engine or transfer-learn onto a wider domain");
    }
    r.lo = std::max(r.lo, engine->lo);
    r.hi = std::min(r.hi, engine->hi);
  }
  return r;
}

/// Log-price range for spec at log-volatility scale s = sigma sqrt(T); nullopt if the payoff vanishes on it.
inline std::optional<Interval> y_interval(const QuadSpec& spec, double sigma, const DensityEngine& engine) {
  const double x0 = std::log(spec.S0);
  Interval r;
  if (spec.y_bounds) {
    r = *spec.y_bounds;
  } else {
    const double s = sigma * std::sqrt(spec.T);
    const double m = -0.5 * sigma * sigma * spec.T;
    r = {x0 + m - spec.q * s, x0 + m + spec.q * s};
  }
  if (spec.align_to_strike) {
    if (spec.payoff.kind() == Payoff::Kind::Call) r.lo = std::max(r.lo, *spec.payoff.log_kink());
    if (spec.payoff.kind() == Payoff::Kind::Put) r.hi = std::min(r.hi, *spec.payoff.log_kink());
  }
  if (!(r.hi > r.lo)) return std::nullopt;
  r = clip_range(r, engine.y_range(), spec.clip_to_engine, "log-price");
  if (!(r.hi > r.lo)) return std::nullopt;
  return r;
}

}  // namespace detail

inline double price_1d(const DensityEngine& engine, const QuadSpec& spec, double sigma) {
  spec.validate();
  if (!(sigma > 0.0)) throw ConfigError("price_1d: sigma must be positive");
  const auto range = detail::y_interval(spec, sigma, engine);
  if (!range) return 0.0;
  const auto rule = simpson_rule(range->lo, range->hi, spec.mesh_points);
  const auto dens = engine.density_1d(std::log(spec.S0), spec.T, sigma, rule.nodes);
  double v = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) v += rule.weights[i] * spec.payoff(std::exp(rule.nodes[i])) * dens[i];
  return v;
}

/// Two-factor price. The log-price range uses sigma = sqrt(max(v0, theta)) as
/// the scale unless y_bounds is set; the variance range comes from z_bounds or
/// the engine.
inline double price_2d(const DensityEngine& engine, const QuadSpec& spec, const HestonParams& params, double v0) {
  spec.validate();
  if (v0 < 0.0) throw ConfigError("price_2d: v0 must be non-negative");
  const double sigma_eff = std::sqrt(std::max({v0, params.theta, 1e-8}));
  const auto yr = detail::y_interval(spec, sigma_eff, engine);
  if (!yr) return 0.0;
  Interval zr;
  if (spec.z_bounds) {
    zr = detail::clip_range(*spec.z_bounds, engine.z_range(), spec.clip_to_engine, "variance");
  } else if (auto e = engine.z_range()) {
    zr = {std::max(0.0, e->lo), e->hi};
  } else {
    throw ConfigError("price_2d: no variance range; set z_bounds");
  }
  const auto ry = simpson_rule(yr->lo, yr->hi, spec.mesh_points);
  const auto rz = simpson_rule(zr.lo, zr.hi, spec.mesh_points);
  const auto dens = engine.density_2d(std::log(spec.S0), v0, spec.T, params, ry.nodes, rz.nodes);
  const std::size_t nz = rz.nodes.size();
  double v = 0.0;
  for (std::size_t i = 0; i < ry.nodes.size(); ++i) {
    double inner = 0.0;
    for (std::size_t j = 0; j < nz; ++j) inner += rz.weights[j] * dens[i * nz + j];
    v += ry.weights[i] * spec.payoff(std::exp(ry.nodes[i])) * inner;
  }
  return v;
}

struct PricingCase {
  double K = 1.0;
  double sigma = 0.25;
  double T = 1.0;
  OptionType type = OptionType::Call;
  double S0 = 1.0;
};

/// n cases with K ~ U[0.8, 1.2], sigma ~ U[0.1, 0.4], T ~ U[0.1, 1.1], S0 = 1.
inline std::vector<PricingCase> sample_cases(std::size_t n, std::uint64_t seed, OptionType type = OptionType::Call) {
  std::mt19937_64 rng(mix_seed(seed, 0x51A7));
  std::uniform_real_distribution<double> uk(0.8, 1.2), us(0.1, 0.4), ut(0.1, 1.1);
  std::vector<PricingCase> out(n);
  for (auto& c : out) {
    c.K = uk(rng);
    c.sigma = us(rng);
    c.T = ut(rng);
    c.type = type;
  }
  return out;
}

using CasePricer = std::function<double(const PricingCase&)>;

/// Prices a case with price_1d, taking everything except payoff, S0 and T from `base`.
inline CasePricer quad_case_pricer(const DensityEngine& engine, QuadSpec base = {}) {
  return [&engine, base](const PricingCase& c) {
    QuadSpec spec = base;
    spec.payoff = Payoff::option(c.type, c.K);
    spec.S0 = c.S0;
    spec.T = c.T;
    return price_1d(engine, spec, c.sigma);
  };
}

inline CasePricer bs_case_pricer() {
  return [](const PricingCase& c) { return bs_price(c.S0, c.K, c.sigma, c.T, c.type); };
}

struct CaseResult {
  PricingCase pricing_case;
  double price = 0.0;
  double reference = 0.0;
  double seconds = 0.0;
};

struct RmseReport {
  std::vector<CaseResult> rows;
  double rmse = 0.0;
  double max_abs_error = 0.0;
  double seconds = 0.0;  // time spent in `priced`, excluding the reference
};

inline RmseReport rmse_report(const CasePricer& priced, const CasePricer& reference,
                              std::span<const PricingCase> cases) {
  RmseReport rep;
  double sse = 0.0;
  for (const auto& c : cases) {
    const auto t0 = std::chrono::steady_clock::now();
    const double p = priced(c);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double r = reference(c);
    rep.rows.push_back({c, p, r, dt});
    rep.seconds += dt;
    sse += (p - r) * (p - r);
    rep.max_abs_error = std::max(rep.max_abs_error, std::abs(p - r));
  }
  if (!cases.empty()) rep.rmse = std::sqrt(sse / double(cases.size()));
  return rep;
}

}  // namespace kdgm
