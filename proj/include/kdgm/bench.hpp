#pragma once

// Acceptance suites. Each criterion runs end to end (training included where
// needed) and reports measured values next to its thresholds. The command-line
// `bench` command and the acceptance test binary both call into this file.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdgm/autodiff.hpp"
#include "kdgm/density.hpp"
#include "kdgm/dgm_net.hpp"
#include "kdgm/oracles.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/persistence.hpp"
#include "kdgm/quad_pricer.hpp"
#include "kdgm/sampler.hpp"
#include "kdgm/trainer.hpp"

namespace kdgm::bench {

using nlohmann::json;

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  json measured = json::object();
  double seconds = 0.0;
};

/// Desk-scale budgets. Defaults are what the acceptance run uses.
struct Settings {
  // Criteria 2 and 6: GBM on x, y in [-1.5, 1.5], sigma in [0.1, 0.4], t in [0, 1.1].
  std::size_t gbm_epochs = 4000;
  std::size_t gbm_points_per_epoch = 1000;
  double gbm_lr = 1e-3;
  // Criterion 3.
  std::size_t lambda_epochs = 300;
  // Criterion 7.
  std::size_t heston_epochs = 8000;
  std::size_t heston_points_per_epoch = 500;
  double heston_lr = 1e-3;
  std::size_t mc_paths = 1000000;
  // Criterion 8.
  std::size_t transfer_epochs = 500;
  // Criterion 10.
  std::size_t roundtrips = 1000;
  std::uint64_t seed = 1;
};

/// Shared state across criteria: settings, a progress log, and trained
/// models that later criteria reuse.
class Context {
 public:
  explicit Context(Settings s = {}, std::ostream* log = nullptr) : settings_(s), log_(log) {}

  const Settings& settings() const noexcept { return settings_; }

  template <class... Args>
  void note(const Args&... args) const {
    if (!log_) return;
    ((*log_) << ... << args) << std::endl;
  }

  std::optional<TrainResult> gbm_desk;

 private:
  Settings settings_;
  std::ostream* log_;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Three-piece schedule: lr0 for the first half of `steps`, lr0/5 to 3/4, then lr0/25.
inline LrSchedule desk_schedule(double lr0, std::size_t steps) {
  return LrSchedule({{std::max<std::size_t>(1, steps / 2), lr0},
                     {std::max<std::size_t>(2, steps * 3 / 4), lr0 / 5.0},
                     {LrSchedule::kForever, lr0 / 25.0}});
}

inline Domain gbm_desk_domain() {
  return Domain(model_layout(ModelKind::Gbm), {{0.0, 1.1}, {-1.5, 1.5}, {-1.5, 1.5}, {0.1, 0.4}});
}

inline Domain gbm_transfer_domain() {
  return Domain(model_layout(ModelKind::Gbm), {{0.0, 0.12}, {-0.75, 0.75}, {-0.75, 0.75}, {0.1, 0.4}});
}

/// Heston domain around the benchmark case (K, v, T, kappa, theta, xi, rho) = (1, 0.2, 1, 1, 0.2, 0.2, 0.2).
inline Domain heston_desk_domain() {
  return Domain(model_layout(ModelKind::Heston), {{0.0, 1.1},
                                                  {-2.0, 2.0},
                                                  {-2.0, 2.0},
                                                  {0.0, 0.6},
                                                  {0.0, 0.6},
                                                  {0.8, 1.2},
                                                  {0.1, 0.3},
                                                  {0.1, 0.3},
                                                  {0.0, 0.4}});
}

inline TrainConfig desk_config(std::size_t epochs, std::size_t ppe, double lr, double lambda, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch.points_per_epoch = ppe;
  c.batch.minibatches_per_epoch = 5;
  c.lambda = lambda;
  c.seed = seed;
  c.lr_schedule = desk_schedule(lr, epochs * 5);
  return c;
}

/// Loss on a fixed held-out sample, independent of the training streams.
inline LossParts heldout_loss(const TrainedModel& m, double lambda, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xE7A1));
  const Tensor interior = sample_interior(m.model.interior_sampling_domain(), n, rng);
  const Tensor terminal = sample_terminal(m.model.domain(), n, rng);
  return minibatch_loss(m.model, m.params, interior, terminal, lambda);
}

/// RMSE against the closed form over 1,000 evenly spaced y in [-half_width, half_width] at x = 0.
inline double gbm_density_rmse(const TrainedModel& m, double tau, double sigma, double half_width = 1.0) {
  std::vector<double> ys(1000);
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = half_width * (-1.0 + 2.0 * double(i) / double(ys.size() - 1));
  const double H = m.model.domain().horizon();
  const auto p = density_1d_grid(CdfSource::from_model(m), H - tau, 0.0, H, sigma, ys);
  double s = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double e = p[i] - gaussian_density(0.0, tau, ys[i], sigma);
    s += e * e;
  }
  return std::sqrt(s / double(ys.size()));
}

inline EpochCallback progress(const Context& ctx, const std::string& label, std::size_t epochs) {
  const std::size_t every = std::max<std::size_t>(1, epochs / 10);
  return [&ctx, label, every](const EpochRecord& r) {
    if (r.epoch % every == 0) ctx.note("  [", label, "] epoch ", r.epoch, " L1=", r.l1, " L2=", r.l2, " L=", r.loss);
  };
}

inline const TrainResult& ensure_gbm(Context& ctx) {
  if (!ctx.gbm_desk) {
    const auto& s = ctx.settings();
    const auto model = PdeModel::gbm(gbm_desk_domain());
    const auto cfg = desk_config(s.gbm_epochs, s.gbm_points_per_epoch, s.gbm_lr, 10.0, s.seed);
    ctx.note("training desk-scale GBM network: ", cfg.describe());
    ctx.gbm_desk = train(model, cfg, progress(ctx, "gbm", cfg.epochs));
  }
  return *ctx.gbm_desk;
}

}  // namespace detail

/// 1. Quadrature with the exact Gaussian density against Black-Scholes.
inline CriterionResult quadrature_fidelity(Context& ctx) {
  CriterionResult r{1, "quadrature_fidelity"};
  const auto t0 = detail::Clock::now();
  GaussianEngine g;
  const auto calls = sample_cases(100, ctx.settings().seed, OptionType::Call);
  const auto puts = sample_cases(100, ctx.settings().seed, OptionType::Put);
  const auto rc = rmse_report(quad_case_pricer(g), bs_case_pricer(), calls);
  const auto rp = rmse_report(quad_case_pricer(g), bs_case_pricer(), puts);
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"rmse_call", rc.rmse}, {"rmse_put", rp.rmse}, {"max_abs_error_call", rc.max_abs_error},
                {"cases", calls.size()}, {"seconds", r.seconds}, {"rmse_limit", 1e-4}, {"seconds_limit", 5.0}};
  r.passed = rc.rmse <= 1e-4 && rp.rmse <= 1e-4 && r.seconds < 5.0;
  return r;
}

/// 2. Desk-scale GBM density against the closed form.
inline CriterionResult gbm_density(Context& ctx) {
  CriterionResult r{2, "gbm_density_desk_scale"};
  const auto t0 = detail::Clock::now();
  const auto& res = detail::ensure_gbm(ctx);
  const double r10 = detail::gbm_density_rmse(res.model, 1.0, 0.25);
  const double r05 = detail::gbm_density_rmse(res.model, 0.5, 0.25);
  const double r025 = detail::gbm_density_rmse(res.model, 0.25, 0.25);
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"rmse_T1.0", r10},          {"rmse_T0.5", r05},
                {"rmse_T0.25", r025},        {"rmse_limit", 0.05},
                {"steps", res.report.steps}, {"train_seconds", res.report.wall_seconds},
                {"best_epoch", res.report.best_epoch}, {"best_loss", res.report.best_loss}};
  r.passed = r10 <= 0.05 && r10 < r025 && res.report.steps >= 20000 && res.report.wall_seconds <= 1800.0;
  return r;
}

/// 3. With equal seeds and budgets, lambda = 10 leaves a smaller residual loss than lambda = 1.
inline CriterionResult lambda_effect(Context& ctx) {
  CriterionResult r{3, "lambda_effect"};
  const auto t0 = detail::Clock::now();
  const auto& s = ctx.settings();
  const auto model = PdeModel::gbm(detail::gbm_desk_domain());
  std::map<double, LossParts> held;
  std::map<double, double> final_l1;
  for (double lambda : {1.0, 10.0}) {
    const auto cfg = detail::desk_config(s.lambda_epochs, s.gbm_points_per_epoch, s.gbm_lr, lambda, s.seed);
    ctx.note("training GBM with lambda=", lambda);
    const auto res = train(model, cfg, detail::progress(ctx, "lambda=" + std::to_string(int(lambda)), cfg.epochs));
    held[lambda] = detail::heldout_loss(res.model, lambda, 5000, s.seed);
    final_l1[lambda] = res.report.epochs.back().l1;
  }
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"heldout_L1_lambda1", held[1.0].l1},   {"heldout_L1_lambda10", held[10.0].l1},
                {"heldout_L2_lambda1", held[1.0].l2},   {"heldout_L2_lambda10", held[10.0].l2},
                {"final_epoch_L1_lambda1", final_l1[1.0]}, {"final_epoch_L1_lambda10", final_l1[10.0]},
                {"epochs", s.lambda_epochs}};
  r.passed = held[10.0].l1 < held[1.0].l1 && final_l1[10.0] < final_l1[1.0];
  return r;
}

/// Hand-built Heston test function: a polynomial with all residual terms active.
struct HestonPolynomial {
  // f = t x^2 + x v^2 + 3 x v + t^2 v
  double value(double t, double x, double v) const { return t * x * x + x * v * v + 3.0 * x * v + t * t * v; }
  ModelDerivs<double> derivs(double t, double x, double v) const {
    ModelDerivs<double> d;
    d.t = x * x + 2.0 * t * v;
    d.x = 2.0 * t * x + v * v + 3.0 * v;
    d.xx = 2.0 * t;
    d.v = 2.0 * x * v + 3.0 * x + t * t;
    d.vv = 2.0 * x;
    d.xv = 2.0 * v + 3.0;
    return d;
  }
  /// The residual written out by hand.
  double residual(double t, double x, double v, const HestonParams& p) const {
    return (x * x + 2.0 * t * v) - 0.5 * v * (2.0 * t * x + v * v + 3.0 * v) + 0.5 * v * (2.0 * t) +
           p.kappa * (p.theta - v) * (2.0 * x * v + 3.0 * x + t * t) + 0.5 * p.xi * p.xi * v * (2.0 * x) +
           p.rho * p.xi * v * (2.0 * v + 3.0);
  }
};

/// 4. Exact solutions annihilate the residual.
inline CriterionResult exact_annihilation(Context& ctx) {
  CriterionResult r{4, "exact_solution_annihilation"};
  const auto t0 = detail::Clock::now();
  const auto gbm = PdeModel::gbm(detail::gbm_desk_domain());
  const double H = gbm.domain().horizon();
  std::mt19937_64 rng(mix_seed(ctx.settings().seed, 4));
  // Interior points at least 0.05 before the horizon, where the CDF is smooth on the fd_step scale.
  Domain inner = gbm.domain();
  inner[0].hi = H - 0.05;
  const Tensor pts = sample_interior(inner, 1000, rng);
  const auto exact = [H](std::span<const double> p) { return gbm_cdf(H - p[0], p[1], p[2], p[3]); };
  const auto req = gbm.derivative_request();
  double gbm_max = 0.0;
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    std::span<const double> p(&pts.data()[i * 4], 4);
    const auto d = PdeModel::unpack(input_derivs(exact, p, req, 1e-4), false);
    gbm_max = std::max(gbm_max, std::abs(gbm.residual(d, p)));
  }

  const auto heston = PdeModel::heston(PdeModel::heston_default_domain());
  const auto hreq = heston.derivative_request();
  HestonPolynomial poly;
  const Tensor hpts = sample_interior(heston.interior_sampling_domain(), 1000, rng);
  double op_max = 0.0;
  double fd_max = 0.0;
  for (std::size_t i = 0; i < hpts.rows(); ++i) {
    std::span<const double> p(&hpts.data()[i * 9], 9);
    const HestonParams hp{p[5], p[6], p[7], p[8]};
    const double want = poly.residual(p[0], p[1], p[3], hp);
    op_max = std::max(op_max, std::abs(heston.residual(poly.derivs(p[0], p[1], p[3]), p) - want));
    // Central differences are exact on this polynomial, so only rounding remains; a coarse step keeps it small.
    const auto f = [&](std::span<const double> q) { return poly.value(q[0], q[1], q[3]); };
    const auto d = PdeModel::unpack(input_derivs(f, p, hreq, 1e-2), true);
    fd_max = std::max(fd_max, std::abs(heston.residual(d, p) - want));
  }
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"gbm_max_abs_residual", gbm_max}, {"gbm_limit", 1e-4}, {"heston_operator_max_error", op_max},
                {"heston_fd_max_error", fd_max},   {"heston_limit", 1e-10}};
  r.passed = gbm_max <= 1e-4 && op_max <= 1e-10 && fd_max <= 1e-10;
  return r;
}

/// 5. Reverse-mode parameter gradients of the training loss against central differences.
inline CriterionResult gradient_check(Context& ctx) {
  CriterionResult r{5, "gradient_check"};
  const auto t0 = detail::Clock::now();
  double worst = 0.0;
  std::string worst_block;
  std::size_t checked = 0;
  for (std::uint64_t net = 0; net < 20; ++net) {
    const bool two = net % 2 == 1;
    const auto model = two ? PdeModel::heston(PdeModel::heston_default_domain())
                           : PdeModel::gbm(PdeModel::gbm_default_domain());
    const NetworkShape shape{model.input_dim(), 3 + net % 4, net % 3};
    NetworkParams params = init_xavier(shape, mix_seed(ctx.settings().seed, 5, net));
    std::mt19937_64 rng(mix_seed(ctx.settings().seed, 50, net));
    // Non-zero biases so every block carries gradient signal.
    std::uniform_real_distribution<double> ub(-0.3, 0.3);
    for (auto& b : params.blocks) {
      if (b.rows() == 1) {
        for (double& w : b.data()) w = ub(rng);
      }
    }
    const Tensor interior = sample_interior(model.interior_sampling_domain(), 6, rng);
    const Tensor terminal = sample_terminal(model.domain(), 6, rng);
    const double lambda = 1.0 + double(net);
    LossGraph g(model, shape, 6, 6, 1e-2, lambda);
    g.forward(params, interior, terminal);
    const auto grads = g.backward();
    const auto names = params.block_names();
    const double h = 1e-4;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      double diff2 = 0.0, ga2 = 0.0, gf2 = 0.0;
      for (std::size_t i = 0; i < params.blocks[b].size(); ++i) {
        double& w = params.blocks[b][i];
        const double w0 = w;
        w = w0 + h;
        const double up = g.forward(params, interior, terminal).total;
        w = w0 - h;
        const double dn = g.forward(params, interior, terminal).total;
        w = w0;
        const double fd = (up - dn) / (2.0 * h);
        const double ad = grads[b][i];
        diff2 += (fd - ad) * (fd - ad);
        ga2 += ad * ad;
        gf2 += fd * fd;
      }
      const double denom = std::max({std::sqrt(ga2), std::sqrt(gf2), 1e-12});
      const double rel = std::sqrt(diff2) / denom;
      if (rel > worst) {
        worst = rel;
        worst_block = names[b] + " (net " + std::to_string(net) + ")";
      }
      ++checked;
    }
  }
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"max_relative_error", worst}, {"worst_block", worst_block}, {"blocks_checked", checked},
                {"nets", 20},                  {"limit", 1e-5},           {"seconds", r.seconds}};
  r.passed = worst <= 1e-5 && r.seconds < 60.0;
  return r;
}

/// 6. Density properties: non-negativity, mass on the trained range, Delta-halving order.
inline CriterionResult density_properties(Context& ctx) {
  CriterionResult r{6, "density_properties"};
  const auto t0 = detail::Clock::now();
  const auto& res = detail::ensure_gbm(ctx);
  const auto cdf = CdfSource::from_model(res.model);
  const double H = res.model.model.domain().horizon();
  const Interval yb = res.model.model.domain().bounds_of("y");
  DensityConfig dc;
  DensityStats stats;

  std::vector<double> ys(1001);
  const double lo = yb.lo + dc.delta, hi = yb.hi - dc.delta;
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = lo + (hi - lo) * double(i) / double(ys.size() - 1);
  double min_density = INFINITY;
  double min_mass = INFINITY, max_mass = -INFINITY;
  json masses = json::array();
  for (double tau : {0.25, 0.5, 1.0}) {
    for (double sigma : {0.15, 0.25, 0.35}) {
      const auto p = density_1d_grid(cdf, H - tau, 0.0, H, sigma, ys, dc, &stats);
      double mass = 0.0;
      for (std::size_t i = 0; i + 1 < ys.size(); ++i) mass += 0.5 * (p[i] + p[i + 1]) * (ys[i + 1] - ys[i]);
      for (double v : p) min_density = std::min(min_density, v);
      min_mass = std::min(min_mass, mass);
      max_mass = std::max(max_mass, mass);
      masses.push_back({{"tau", tau}, {"sigma", sigma}, {"mass", mass}});
    }
  }
  for (double x : {-0.5, 0.5}) {
    const auto p = density_1d_grid(cdf, H - 0.5, x, H, 0.25, ys, dc, &stats);
    for (double v : p) min_density = std::min(min_density, v);
  }

  // Delta-halving on exact CDF hooks (one- and two-factor).
  const auto exact = CdfSource::from_function(res.model.model, [H](std::span<const double> p) {
    return gbm_cdf(H - p[0], p[1], p[2], p[3]);
  });
  const double y0 = 0.15, want = gaussian_density(0.0, 1.0, y0, 0.25);
  std::vector<double> err1;
  for (double delta : {0.02, 0.01, 0.005}) {
    err1.push_back(std::abs(density_1d(exact, H - 1.0, 0.0, H, y0, 0.25, {delta, false}) - want));
  }
  const auto td = PdeModel::td_heston(PdeModel::td_heston_default_domain());
  const auto product = CdfSource::from_function(td, [](std::span<const double> p) {
    return normal_cdf(p[2] / 0.5) * normal_cdf((p[4] - 0.2) / 0.05);
  });
  const double yq = 0.3, zq = 0.22;
  const double want2 = normal_pdf(yq / 0.5) / 0.5 * normal_pdf((zq - 0.2) / 0.05) / 0.05;
  std::vector<double> err2;
  for (double delta : {0.004, 0.002, 0.001}) {
    err2.push_back(std::abs(density_2d(product, 0.0, 0.0, 0.04, td.domain().horizon(), yq, zq, {}, {delta, false}) - want2));
  }
  const double ratio1a = err1[0] / err1[1], ratio1b = err1[1] / err1[2];
  const double ratio2a = err2[0] / err2[1], ratio2b = err2[1] / err2[2];
  auto near4 = [](double q) { return q > 3.5 && q < 4.5; };

  r.seconds = detail::seconds_since(t0);
  r.measured = {{"min_density", min_density},
                {"clamped", stats.clamped},
                {"evaluations", stats.evaluations},
                {"mass_min", min_mass},
                {"mass_max", max_mass},
                {"masses", masses},
                {"halving_ratios_1d", {ratio1a, ratio1b}},
                {"halving_ratios_2d", {ratio2a, ratio2b}}};
  r.passed = min_density >= 0.0 && min_mass >= 0.95 && max_mass <= 1.02 && near4(ratio1a) && near4(ratio1b) &&
             near4(ratio2a) && near4(ratio2b);
  return r;
}

/// 7. Heston: MC oracle against the reference price 0.179, then a desk-scale network against the oracle.
inline CriterionResult heston_crosscheck(Context& ctx) {
  CriterionResult r{7, "heston_crosscheck"};
  const auto t0 = detail::Clock::now();
  const auto& s = ctx.settings();
  const HestonParams hp{1.0, 0.2, 0.2, 0.2};
  const double v0 = 0.2, T = 1.0, K = 1.0;

  McConfig mc{s.mc_paths, 250, s.seed};
  ctx.note("simulating Heston MC oracle with ", mc.paths, " paths");
  const auto samples = heston_mc(0.0, v0, hp, T, mc);
  const auto est = mc_price(samples.x, Payoff::call(K));
  const bool oracle_ok = std::abs(est.mean - 0.179) <= 0.005;

  const auto model = PdeModel::heston(detail::heston_desk_domain());
  const auto cfg = detail::desk_config(s.heston_epochs, s.heston_points_per_epoch, s.heston_lr, 100.0, s.seed);
  ctx.note("training desk-scale Heston network: ", cfg.describe());
  const auto res = train(model, cfg, detail::progress(ctx, "heston", cfg.epochs));

  NetworkEngine engine(res.model);
  QuadSpec spec;
  spec.payoff = Payoff::call(K);
  spec.T = T;
  spec.clip_to_engine = true;
  const double nn_price = price_2d(engine, spec, hp, v0);
  const bool price_ok = std::abs(nn_price - est.mean) <= 0.02;

  // Monotonicity in y along random rays.
  std::mt19937_64 rng(mix_seed(s.seed, 7));
  const Domain& dom = model.domain();
  const Tensor anchors = sample_interior(model.interior_sampling_domain(), 100, rng);
  const std::size_t ny = 101;
  Tensor rays = Tensor::matrix(100 * ny, 9);
  for (std::size_t k = 0; k < 100; ++k) {
    for (std::size_t i = 0; i < ny; ++i) {
      for (std::size_t c = 0; c < 9; ++c) rays(k * ny + i, c) = anchors(k, c);
      rays(k * ny + i, 2) = dom[2].lo + dom[2].width() * double(i) / double(ny - 1);
    }
  }
  const auto f = eval_batch(res.model.params, rays);
  std::size_t violations = 0, pairs = 0;
  for (std::size_t k = 0; k < 100; ++k) {
    for (std::size_t i = 0; i + 1 < ny; ++i) {
      ++pairs;
      if (f[k * ny + i + 1] < f[k * ny + i]) ++violations;
    }
  }
  const double violation_rate = double(violations) / double(pairs);

  // Terminal fit against the f = 0 baseline on held-out terminal points.
  std::mt19937_64 trng(mix_seed(s.seed, 70));
  const Tensor term = sample_terminal(dom, 5000, trng);
  const auto ft = eval_batch(res.model.params, term);
  double l2 = 0.0, base = 0.0;
  for (std::size_t j = 0; j < term.rows(); ++j) {
    const double ind = model.terminal(std::span<const double>(&term.data()[j * 9], 9));
    l2 += (ft[j] - ind) * (ft[j] - ind);
    base += ind * ind;
  }
  l2 /= double(term.rows());
  base /= double(term.rows());

  r.seconds = detail::seconds_since(t0);
  r.measured = {{"mc_price", est.mean},
                {"mc_std_error", est.std_error},
                {"mc_paths", mc.paths},
                {"benchmark", 0.179},
                {"network_price", nn_price},
                {"network_minus_mc", nn_price - est.mean},
                {"monotonicity_violation_rate", violation_rate},
                {"terminal_L2", l2},
                {"terminal_L2_baseline", base},
                {"baseline_ratio", base / l2},
                {"steps", res.report.steps},
                {"train_seconds", res.report.wall_seconds},
                {"clamped_densities", engine.stats().clamped}};
  r.passed = oracle_ok && price_ok && violation_rate < 0.01 && base / l2 >= 5.0;
  return r;
}

/// 8. Transfer learning beats fresh initialization at equal budget on the narrowed domain.
inline CriterionResult transfer_learning(Context& ctx) {
  CriterionResult r{8, "transfer_learning"};
  const auto t0 = detail::Clock::now();
  const auto& s = ctx.settings();
  const auto& base = detail::ensure_gbm(ctx);
  const auto target = PdeModel::gbm(detail::gbm_transfer_domain());
  const auto cfg = detail::desk_config(s.transfer_epochs, s.gbm_points_per_epoch, s.gbm_lr, 10.0, s.seed);
  ctx.note("transfer run on the narrowed domain");
  const auto tr = transfer(target, base.model, cfg, detail::progress(ctx, "transfer", cfg.epochs));
  ctx.note("fresh run on the narrowed domain");
  const auto fr = train(target, cfg, detail::progress(ctx, "fresh", cfg.epochs));
  const auto held_t = detail::heldout_loss(tr.model, 10.0, 5000, s.seed);
  const auto held_f = detail::heldout_loss(fr.model, 10.0, 5000, s.seed);
  // The narrowed box only covers |y| <= 0.75.
  const double rmse_t = detail::gbm_density_rmse(tr.model, 0.1, 0.25, 0.5);
  const double rmse_f = detail::gbm_density_rmse(fr.model, 0.1, 0.25, 0.5);
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"transfer_best_loss", tr.report.best_loss}, {"fresh_best_loss", fr.report.best_loss},
                {"transfer_heldout_loss", held_t.total},     {"fresh_heldout_loss", held_f.total},
                {"transfer_density_rmse_T0.1", rmse_t},      {"fresh_density_rmse_T0.1", rmse_f},
                {"epochs", s.transfer_epochs}};
  r.passed = tr.report.best_loss < fr.report.best_loss && held_t.total < held_f.total;
  return r;
}

/// 9. Time-dependent Heston: schedule lookups and the MC check of the reference network put price 0.041.
inline CriterionResult td_heston(Context& ctx) {
  CriterionResult r{9, "time_dependent_heston"};
  const auto t0 = detail::Clock::now();
  const auto sched = PiecewiseSchedule::standard();
  struct Expect {
    double t, theta, xi, rho;
  };
  const Expect table[] = {{0.1, 0.04, 0.3, -0.2}, {0.3, 0.0405, 0.305, -0.1965}, {0.6, 0.041, 0.31, -0.193},
                          {1.1, 0.0415, 0.315, -0.1895}};
  bool lookups_ok = true;
  json lookups = json::array();
  for (const auto& e : table) {
    const auto v = sched.at(e.t);
    lookups_ok = lookups_ok && v.theta == e.theta && v.xi == e.xi && v.rho == e.rho;
    lookups.push_back({{"t", e.t}, {"theta", v.theta}, {"xi", v.xi}, {"rho", v.rho}});
  }
  McConfig mc{ctx.settings().mc_paths, 250, ctx.settings().seed};
  const auto samples = heston_mc(0.0, 0.04, 3.0, sched, 0.25, mc);
  const auto est = mc_price(samples.x, Payoff::put(1.0));
  r.seconds = detail::seconds_since(t0);
  r.measured = {{"lookups", lookups}, {"mc_put", est.mean}, {"mc_std_error", est.std_error},
                {"reference_nn_put", 0.041}, {"tolerance", 0.01}, {"mc_paths", mc.paths}};
  r.passed = lookups_ok && std::abs(est.mean - 0.041) <= 0.01;
  return r;
}

/// 10. Model files round-trip bit-identically and every damaged file is rejected.
inline CriterionResult persistence_roundtrip(Context& ctx) {
  CriterionResult r{10, "persistence"};
  const auto t0 = detail::Clock::now();
  const auto& s = ctx.settings();
  std::size_t identical = 0;
  std::vector<std::uint8_t> sample_bytes;
  for (std::size_t i = 0; i < s.roundtrips; ++i) {
    const ModelKind kind = ModelKind(i % 3);
    TrainedModel m{kind == ModelKind::Gbm      ? PdeModel::gbm(PdeModel::gbm_default_domain())
                   : kind == ModelKind::Heston ? PdeModel::heston(PdeModel::heston_default_domain())
                                               : PdeModel::td_heston(PdeModel::td_heston_default_domain()),
                   {},
                   {}};
    m.params = init_xavier({m.model.input_dim(), 4 + i % 13, i % 4}, mix_seed(s.seed, 10, i));
    m.provenance.config_hash = fnv1a_hex(std::to_string(i));
    m.provenance.best_loss = 1.0 / double(i + 1);
    m.provenance.seed = i;
    const auto bytes = to_bytes(m);
    const auto back = from_bytes(bytes);
    bool same = back.params.shape == m.params.shape && back.provenance == m.provenance &&
                back.model.domain().bounds() == m.model.domain().bounds() && to_bytes(back) == bytes;
    for (std::size_t b = 0; same && b < m.params.blocks.size(); ++b) {
      const auto& x = m.params.blocks[b].storage();
      const auto& y = back.params.blocks[b].storage();
      same = x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
    }
    identical += same;
    if (i == 0) sample_bytes = bytes;
  }

  // Damaged files: truncations, single-byte flips, a bumped version, a bad magic.
  std::mt19937_64 rng(mix_seed(s.seed, 100));
  std::size_t damaged = 0, rejected = 0;
  auto expect_reject = [&](const std::vector<std::uint8_t>& bytes) {
    ++damaged;
    try {
      (void)from_bytes(bytes);
    } catch (const FormatError&) {
      ++rejected;
    }
  };
  for (std::size_t k = 0; k < 500; ++k) {
    std::uniform_int_distribution<std::size_t> cut(0, sample_bytes.size() - 1);
    expect_reject(std::vector<std::uint8_t>(sample_bytes.begin(), sample_bytes.begin() + std::ptrdiff_t(cut(rng))));
    auto flipped = sample_bytes;
    std::uniform_int_distribution<int> bit(0, 7);
    flipped[cut(rng)] ^= std::uint8_t(1u << bit(rng));
    expect_reject(flipped);
  }
  auto bumped = sample_bytes;
  bumped[4] = std::uint8_t(kFormatVersion + 1);
  bool version_error = false;
  try {
    (void)from_bytes(bumped);
  } catch (const VersionError&) {
    version_error = true;
  } catch (const Error&) {
  }
  auto magic = sample_bytes;
  magic[0] = 'X';
  expect_reject(magic);

  r.seconds = detail::seconds_since(t0);
  r.measured = {{"roundtrips", s.roundtrips}, {"bit_identical", identical}, {"damaged_files", damaged},
                {"rejected", rejected},       {"version_error_detected", version_error}};
  r.passed = identical == s.roundtrips && rejected == damaged && version_error;
  return r;
}

using CriterionFn = std::function<CriterionResult(Context&)>;

inline const std::map<int, CriterionFn>& criteria() {
  static const std::map<int, CriterionFn> table{
      {1, quadrature_fidelity}, {2, gbm_density},         {3, lambda_effect},     {4, exact_annihilation},
      {5, gradient_check},      {6, density_properties},  {7, heston_crosscheck}, {8, transfer_learning},
      {9, td_heston},           {10, persistence_roundtrip}};
  return table;
}

/// Suite name -> criterion ids.
inline const std::map<std::string, std::vector<int>>& suites() {
  static const std::map<std::string, std::vector<int>> table{
      {"quadrature", {1}},  {"gbm_density", {2}},   {"lambda", {3}},     {"annihilation", {4}},
      {"gradcheck", {5}},   {"density", {6}},       {"heston", {7}},     {"transfer", {8}},
      {"td_heston", {9}},   {"persistence", {10}},  {"fast", {1, 4, 5, 9, 10}},
      {"all", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}}};
  return table;
}

inline std::string suite_list() {
  std::string out;
  for (const auto& [name, ids] : suites()) out += (out.empty() ? "" : ", ") + name;
  return out;
}

inline std::vector<CriterionResult> run(const std::vector<int>& ids, Context& ctx) {
  std::vector<CriterionResult> out;
  for (int id : ids) {
    const auto it = criteria().find(id);
    if (it == criteria().end()) throw ConfigError("unknown criterion " + std::to_string(id));
    ctx.note("criterion ", id, " ...");
    out.push_back(it->second(ctx));
  }
  return out;
}

inline std::vector<CriterionResult> run_suite(const std::string& name, Context& ctx) {
  const auto it = suites().find(name);
  if (it == suites().end()) throw ConfigError("unknown suite '" + name + "'; available suites: " + suite_list());
  return run(it->second, ctx);
}

/// One line per criterion: "CRITERION <id> <PASS|FAIL> <name> <measured json>".
inline std::string format_line(const CriterionResult& r) {
  return "CRITERION " + std::to_string(r.id) + " " + (r.passed ? "PASS" : "FAIL") + " " + r.name + " " +
         r.measured.dump();
}

}  // namespace kdgm::bench
