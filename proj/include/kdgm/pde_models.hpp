#pragma once

// Parametric backward Kolmogorov problems for the CDF
// C(t, x[, v]; T, y[, z]) of log-price (and variance) processes.
//
// Every residual is written as the linear operator
//   dC/dt + c_x dC/dx + c_xx d2C/dx2 + c_v dC/dv + c_vv d2C/dv2 + c_xv d2C/dxdv
// with model-specific coefficients, so the same code runs on plain doubles
// and on tape variables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdgm/dgm_net.hpp"
#include "kdgm/error.hpp"

namespace kdgm {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const noexcept { return hi - lo; }
  double mid() const noexcept { return 0.5 * (lo + hi); }
  bool contains(double v, double slack = 0.0) const noexcept { return v >= lo - slack && v <= hi + slack; }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Closed box over named input coordinates. Coordinate 0 is always time.
class Domain {
 public:
  Domain() = default;

  Domain(std::vector<std::string> names, std::vector<Interval> bounds)
      : names_(std::move(names)), bounds_(std::move(bounds)) {
    if (names_.size() != bounds_.size() || names_.empty()) {
      throw ConfigError("Domain: names and bounds must be non-empty and of equal length");
    }
    if (names_[0] != "t") throw ConfigError("Domain: first coordinate must be time 't'");
    for (std::size_t i = 0; i < bounds_.size(); ++i) {
      if (!(bounds_[i].lo < bounds_[i].hi) || !std::isfinite(bounds_[i].lo) || !std::isfinite(bounds_[i].hi)) {
        throw ConfigError("Domain: coordinate '" + names_[i] + "' needs lo < hi");
      }
    }
    if (bounds_[0].lo != 0.0) throw ConfigError("Domain: time interval must start at 0");
  }

  std::size_t dim() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<Interval>& bounds() const noexcept { return bounds_; }
  const Interval& operator[](std::size_t i) const { return bounds_.at(i); }
  Interval& operator[](std::size_t i) { return bounds_.at(i); }

  /// Terminal time T of the problem.
  double horizon() const { return bounds_.at(0).hi; }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return std::size_t(it - names_.begin());
  }

  std::size_t index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw ConfigError("Domain: no coordinate named '" + name + "'");
  }

  const Interval& bounds_of(const std::string& name) const { return bounds_[index_of(name)]; }

  bool contains(std::span<const double> point, double slack = 1e-12) const {
    if (point.size() != bounds_.size()) return false;
    for (std::size_t i = 0; i < point.size(); ++i) {
      if (!bounds_[i].contains(point[i], slack)) return false;
    }
    return true;
  }

  friend bool operator==(const Domain&, const Domain&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Interval> bounds_;
};

/// Piecewise-constant (theta, xi, rho) on left-open intervals (b_{i-1}, b_i];
/// the first interval is closed at 0.
class PiecewiseSchedule {
 public:
  struct Values {
    double theta;
    double xi;
    double rho;
  };

  PiecewiseSchedule() = default;

  PiecewiseSchedule(std::vector<double> breakpoints, std::vector<double> theta, std::vector<double> xi,
                    std::vector<double> rho)
      : breakpoints_(std::move(breakpoints)), theta_(std::move(theta)), xi_(std::move(xi)), rho_(std::move(rho)) {
    const std::size_t n = breakpoints_.size();
    if (n == 0 || theta_.size() != n || xi_.size() != n || rho_.size() != n) {
      throw ConfigError("PiecewiseSchedule: need one theta/xi/rho value per breakpoint");
    }
    double prev = 0.0;
    for (double b : breakpoints_) {
      if (!(b > prev)) throw ConfigError("PiecewiseSchedule: breakpoints must be positive and ascending");
      prev = b;
    }
  }

  /// theta = 0.04 + 0.0005 i, xi = 0.3 + 0.005 i, rho = -0.2 + 0.0035 i on
  /// [0, 0.25], (0.25, 0.5], (0.5, 1.0], (1.0, 1.2].
  static PiecewiseSchedule standard() {
    return {{0.25, 0.5, 1.0, 1.2},
            {0.04, 0.0405, 0.041, 0.0415},
            {0.3, 0.305, 0.31, 0.315},
            {-0.2, -0.1965, -0.193, -0.1895}};
  }

  std::size_t interval_index(double t) const {
    if (!(t >= 0.0) || t > breakpoints_.back()) {
      throw DomainError("PiecewiseSchedule: t = " + std::to_string(t) + " outside [0, " +
                        std::to_string(breakpoints_.back()) + "]");
    }
    auto it = std::lower_bound(breakpoints_.begin(), breakpoints_.end(), t);
    return std::size_t(it - breakpoints_.begin());
  }

  Values at(double t) const {
    const std::size_t i = interval_index(t);
    return {theta_[i], xi_[i], rho_[i]};
  }

  double end() const { return breakpoints_.back(); }
  std::size_t size() const noexcept { return breakpoints_.size(); }
  const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
  const std::vector<double>& theta() const noexcept { return theta_; }
  const std::vector<double>& xi() const noexcept { return xi_; }
  const std::vector<double>& rho() const noexcept { return rho_; }

  friend bool operator==(const PiecewiseSchedule&, const PiecewiseSchedule&) = default;

 private:
  std::vector<double> breakpoints_;
  std::vector<double> theta_;
  std::vector<double> xi_;
  std::vector<double> rho_;
};

struct HestonParams {
  double kappa = 1.0;
  double theta = 0.2;
  double xi = 0.2;
  double rho = 0.0;
};

inline bool feller_holds(double kappa, double theta, double xi) { return 2.0 * kappa * theta >= xi * xi; }

/// Input derivatives consumed by the residual operators. One-factor models
/// leave the v entries unused.
template <class V>
struct ModelDerivs {
  V t{};
  V x{};
  V xx{};
  V v{};
  V vv{};
  V xv{};
};

template <class C>
struct OperatorCoeffs {
  C x{};
  C xx{};
  C v{};
  C vv{};
  C xv{};
};

/// dC/dt plus the generator. `two_factor` selects whether the variance terms exist.
template <class V, class C>
V apply_operator(const ModelDerivs<V>& d, const OperatorCoeffs<C>& c, bool two_factor) {
  V r = d.t + c.x * d.x + c.xx * d.xx;
  if (two_factor) r = r + c.v * d.v + c.vv * d.vv + c.xv * d.xv;
  return r;
}

inline OperatorCoeffs<double> gbm_coeffs(double sigma) {
  const double a = 0.5 * sigma * sigma;
  return {-a, a, 0.0, 0.0, 0.0};
}

inline OperatorCoeffs<double> heston_coeffs(double kappa, double theta, double xi, double rho, double v) {
  if (v < 0.0) throw DomainError("heston residual: variance v = " + std::to_string(v) + " is negative");
  return {-0.5 * v, 0.5 * v, kappa * (theta - v), 0.5 * xi * xi * v, rho * xi * v};
}

/// dC/dt - (sigma^2/2) dC/dx + (sigma^2/2) d2C/dx2.
inline double gbm_residual(const ModelDerivs<double>& d, double sigma) {
  return apply_operator(d, gbm_coeffs(sigma), false);
}

/// dC/dt - (v/2) dC/dx + kappa(theta - v) dC/dv + (v/2) d2C/dx2
///   + (xi^2 v/2) d2C/dv2 + rho xi v d2C/dxdv.
inline double heston_residual(const ModelDerivs<double>& d, const HestonParams& p, double v) {
  return apply_operator(d, heston_coeffs(p.kappa, p.theta, p.xi, p.rho, v), true);
}

/// Heston residual with theta, xi, rho looked up in `schedule` at time t.
inline double td_heston_residual(const ModelDerivs<double>& d, const PiecewiseSchedule& schedule, double kappa,
                                 double t, double v) {
  const auto s = schedule.at(t);
  return apply_operator(d, heston_coeffs(kappa, s.theta, s.xi, s.rho, v), true);
}

inline double terminal_indicator_1d(double x, double y) { return x <= y ? 1.0 : 0.0; }

inline double terminal_indicator_2d(double x, double v, double y, double z) {
  return (x <= y && v <= z) ? 1.0 : 0.0;
}

enum class ModelKind { Gbm, Heston, TdHeston };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::Gbm: return "gbm";
    case ModelKind::Heston: return "heston";
    case ModelKind::TdHeston: return "td_heston";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "gbm") return ModelKind::Gbm;
  if (s == "heston") return ModelKind::Heston;
  if (s == "td_heston") return ModelKind::TdHeston;
  throw ConfigError("unknown model '" + s + "' (expected gbm, heston or td_heston)");
}

inline std::vector<std::string> model_layout(ModelKind k) {
  switch (k) {
    case ModelKind::Gbm: return {"t", "x", "y", "sigma"};
    case ModelKind::Heston: return {"t", "x", "y", "v", "z", "kappa", "theta", "xi", "rho"};
    case ModelKind::TdHeston: return {"t", "x", "y", "v", "z"};
  }
  return {};
}

/// A parametric backward Kolmogorov problem: input layout, domain, operator
/// coefficients and terminal condition. Immutable after construction.
class PdeModel {
 public:
  /// Width of the strip near v = 0 excluded when sampling interior points.
  static constexpr double kVarianceFloor = 1e-4;

  PdeModel() = default;

  static PdeModel gbm(Domain domain) { return PdeModel(ModelKind::Gbm, std::move(domain), 0.0, {}); }

  static PdeModel heston(Domain domain) { return PdeModel(ModelKind::Heston, std::move(domain), 0.0, {}); }

  static PdeModel td_heston(Domain domain, double kappa = 3.0,
                            PiecewiseSchedule schedule = PiecewiseSchedule::standard()) {
    return PdeModel(ModelKind::TdHeston, std::move(domain), kappa, std::move(schedule));
  }

  /// t in [0, 1.2], x, y in [-2.3, 2.3], sigma in [0, 0.6].
  static Domain gbm_default_domain() {
    return Domain(model_layout(ModelKind::Gbm), {{0.0, 1.2}, {-2.3, 2.3}, {-2.3, 2.3}, {0.0, 0.6}});
  }

  /// t in [0, 1.2], x, y in [-3.5, 3.5], v, z in [0, 1], kappa in [0.8, 1.2],
  /// theta in [0.1, 0.3], xi in [0, 0.3], rho in [-0.5, 0.5].
  static Domain heston_default_domain() {
    return Domain(model_layout(ModelKind::Heston), {{0.0, 1.2},
                                                    {-3.5, 3.5},
                                                    {-3.5, 3.5},
                                                    {0.0, 1.0},
                                                    {0.0, 1.0},
                                                    {0.8, 1.2},
                                                    {0.1, 0.3},
                                                    {0.0, 0.3},
                                                    {-0.5, 0.5}});
  }

  /// t in [0, 1.2], x, y in [-2.3, 2.3], v, z in [0, 0.4].
  static Domain td_heston_default_domain() {
    return Domain(model_layout(ModelKind::TdHeston), {{0.0, 1.2}, {-2.3, 2.3}, {-2.3, 2.3}, {0.0, 0.4}, {0.0, 0.4}});
  }

  static Domain default_domain(ModelKind k) {
    switch (k) {
      case ModelKind::Gbm: return gbm_default_domain();
      case ModelKind::Heston: return heston_default_domain();
      case ModelKind::TdHeston: return td_heston_default_domain();
    }
    return {};
  }

  ModelKind kind() const noexcept { return kind_; }
  std::string name() const { return model_kind_name(kind_); }
  const Domain& domain() const noexcept { return domain_; }
  std::size_t input_dim() const noexcept { return domain_.dim(); }
  const std::vector<std::string>& layout() const noexcept { return domain_.names(); }
  bool two_factor() const noexcept { return kind_ != ModelKind::Gbm; }
  /// Whether the CDF depends on t and T only through T - t.
  bool time_homogeneous() const noexcept { return kind_ != ModelKind::TdHeston; }
  double kappa() const noexcept { return kappa_; }
  const PiecewiseSchedule& schedule() const noexcept { return schedule_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  std::size_t t_index() const noexcept { return 0; }
  std::size_t x_index() const noexcept { return 1; }
  std::size_t y_index() const noexcept { return 2; }
  std::size_t v_index() const noexcept { return 3; }
  std::size_t z_index() const noexcept { return 4; }

  /// Central-difference stencil the residual needs.
  DerivativeRequest derivative_request() const {
    DerivativeRequest r;
    if (two_factor()) {
      r.first = {t_index(), x_index(), v_index()};
      r.second = {x_index(), v_index()};
      r.cross = {{x_index(), v_index()}};
    } else {
      r.first = {t_index(), x_index()};
      r.second = {x_index()};
    }
    return r;
  }

  OperatorCoeffs<double> coefficients(std::span<const double> p) const {
    switch (kind_) {
      case ModelKind::Gbm: return gbm_coeffs(p[3]);
      case ModelKind::Heston: return heston_coeffs(p[5], p[6], p[7], p[8], p[3]);
      case ModelKind::TdHeston: {
        const auto s = schedule_.at(p[0]);
        return heston_coeffs(kappa_, s.theta, s.xi, s.rho, p[3]);
      }
    }
    return {};
  }

  double residual(const ModelDerivs<double>& d, std::span<const double> point) const {
    return apply_operator(d, coefficients(point), two_factor());
  }

  double terminal(std::span<const double> p) const {
    return two_factor() ? terminal_indicator_2d(p[1], p[3], p[2], p[4]) : terminal_indicator_1d(p[1], p[2]);
  }

  /// Domain used to draw interior points: the variance coordinate starts
  /// kVarianceFloor above 0 where the operator degenerates.
  Domain interior_sampling_domain() const {
    Domain d = domain_;
    if (two_factor() && d[v_index()].lo < kVarianceFloor) d[v_index()].lo = kVarianceFloor;
    return d;
  }

  /// Derivatives requested by `derivative_request`, unpacked into named slots.
  static ModelDerivs<double> unpack(const InputDerivatives& d, bool two_factor) {
    ModelDerivs<double> m;
    m.t = d.first.at(0);
    m.x = d.first.at(1);
    m.xx = d.second.at(0);
    if (two_factor) {
      m.v = d.first.at(2);
      m.vv = d.second.at(1);
      m.xv = d.cross.at(0);
    }
    return m;
  }

  /// Network input vectors in the model's layout.
  std::vector<double> gbm_input(double t, double x, double y, double sigma) const {
    expect(ModelKind::Gbm);
    return {t, x, y, sigma};
  }
  std::vector<double> heston_input(double t, double x, double y, double v, double z, const HestonParams& p) const {
    expect(ModelKind::Heston);
    return {t, x, y, v, z, p.kappa, p.theta, p.xi, p.rho};
  }
  std::vector<double> td_heston_input(double t, double x, double y, double v, double z) const {
    expect(ModelKind::TdHeston);
    return {t, x, y, v, z};
  }

 private:
  PdeModel(ModelKind kind, Domain domain, double kappa, PiecewiseSchedule schedule)
      : kind_(kind), domain_(std::move(domain)), kappa_(kappa), schedule_(std::move(schedule)) {
    if (domain_.names() != model_layout(kind_)) {
      throw ConfigError("PdeModel(" + name() + "): domain layout does not match the model's input layout");
    }
    if (kind_ == ModelKind::Heston) {
      const auto& k = domain_[5];
      const auto& th = domain_[6];
      const auto& xi = domain_[7];
      if (!feller_holds(k.lo, th.lo, xi.hi)) {
        warnings_.push_back("Feller condition 2*kappa*theta >= xi^2 fails in part of the domain");
      }
      if (domain_[3].lo < 0.0 || domain_[4].lo < 0.0) throw ConfigError("PdeModel(heston): variance bounds must be >= 0");
    }
    if (kind_ == ModelKind::TdHeston) {
      if (!(kappa_ > 0.0)) throw ConfigError("PdeModel(td_heston): kappa must be positive");
      if (schedule_.size() == 0) throw ConfigError("PdeModel(td_heston): empty schedule");
      if (schedule_.end() < domain_.horizon() - 1e-12) {
        throw ConfigError("PdeModel(td_heston): schedule does not cover the time domain");
      }
      for (std::size_t i = 0; i < schedule_.size(); ++i) {
        if (!feller_holds(kappa_, schedule_.theta()[i], schedule_.xi()[i])) {
          warnings_.push_back("Feller condition fails on schedule interval " + std::to_string(i));
        }
      }
      if (domain_[3].lo < 0.0 || domain_[4].lo < 0.0) {
        throw ConfigError("PdeModel(td_heston): variance bounds must be >= 0");
      }
    }
  }

  void expect(ModelKind k) const {
    if (kind_ != k) {
      throw ConfigError("model layout mismatch: model is " + name() + ", query is for " + model_kind_name(k));
    }
  }

  ModelKind kind_ = ModelKind::Gbm;
  Domain domain_;
  double kappa_ = 0.0;
  PiecewiseSchedule schedule_;
  std::vector<std::string> warnings_;
};

}  // namespace kdgm
