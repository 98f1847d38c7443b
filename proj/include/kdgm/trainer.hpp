#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "kdgm/adam.hpp"
#include "kdgm/autodiff.hpp"
#include "kdgm/dgm_net.hpp"
#include "kdgm/error.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/sampler.hpp"

namespace kdgm {

/// Piecewise-constant learning rate: alpha_i applies while n <= threshold_i.
class LrSchedule {
 public:
  struct Piece {
    std::size_t threshold;
    double alpha;
  };

  static constexpr std::size_t kForever = std::numeric_limits<std::size_t>::max();

  LrSchedule() = default;

  explicit LrSchedule(std::vector<Piece> pieces) : pieces_(std::move(pieces)) { validate(); }

  /// 1e-4 up to step 5,000, then 5e-5, 1e-5, 5e-6, 1e-6, 5e-7, 1e-7, 5e-8 and finally 1e-8 after 200,000.
  static LrSchedule standard() {
    return LrSchedule({{5000, 1e-4},
                       {10000, 5e-5},
                       {20000, 1e-5},
                       {30000, 5e-6},
                       {40000, 1e-6},
                       {50000, 5e-7},
                       {100000, 1e-7},
                       {200000, 5e-8},
                       {kForever, 1e-8}});
  }

  static LrSchedule constant(double alpha) { return LrSchedule({{kForever, alpha}}); }

  void validate() const {
    if (pieces_.empty()) throw ConfigError("LrSchedule: no pieces");
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      if (!(pieces_[i].alpha > 0.0)) throw ConfigError("LrSchedule: learning rates must be positive");
      if (i > 0 && !(pieces_[i].threshold > pieces_[i - 1].threshold)) {
        throw ConfigError("LrSchedule: thresholds must be ascending");
      }
      if (i > 0 && !(pieces_[i].alpha < pieces_[i - 1].alpha)) {
        throw ConfigError("LrSchedule: learning rates must be strictly decreasing");
      }
    }
  }

  /// Rate for 1-based step n; the last piece extends past its threshold.
  double at(std::size_t n) const {
    for (const auto& p : pieces_) {
      if (n <= p.threshold) return p.alpha;
    }
    return pieces_.back().alpha;
  }

  const std::vector<Piece>& pieces() const noexcept { return pieces_; }

 private:
  std::vector<Piece> pieces_;
};

enum class CheckpointPolicy {
  /// Keep the parameters of the epoch with the lowest end-of-epoch loss.
  LowestLoss,
  /// Keep the final parameters; epoch losses are the mini-batch averages seen during training.
  Last,
};

struct TrainConfig {
  double lambda = 10.0;
  std::size_t epochs = 100;
  BatchPlan batch;
  LrSchedule lr_schedule = LrSchedule::standard();
  double fd_step = 1e-4;
  std::uint64_t seed = 1;
  std::size_t width = 50;
  std::size_t layers = 3;
  AdamConfig adam;
  CheckpointPolicy checkpoint = CheckpointPolicy::LowestLoss;
  /// Stop once an epoch loss falls below this value; 0 disables.
  double early_stop_loss = 0.0;
  double divergence_limit = 1e6;

  void validate() const {
    if (!(lambda >= 1.0)) throw ConfigError("TrainConfig: lambda must be >= 1");
    if (!(fd_step > 0.0)) throw ConfigError("TrainConfig: fd_step must be positive");
    if (width == 0) throw ConfigError("TrainConfig: width must be positive");
    batch.validate();
    lr_schedule.validate();
  }

  /// Stable key=value rendering; hashed into model provenance.
  std::string describe() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "lambda=" << lambda << " epochs=" << epochs << " points_per_epoch=" << batch.points_per_epoch
       << " minibatches=" << batch.minibatches_per_epoch << " fd_step=" << fd_step << " seed=" << seed
       << " width=" << width << " layers=" << layers << " beta1=" << adam.beta1 << " beta2=" << adam.beta2
       << " eps=" << adam.epsilon << " bias_correction=" << adam.bias_correction
       << " checkpoint=" << (checkpoint == CheckpointPolicy::LowestLoss ? "lowest_loss" : "last")
       << " early_stop=" << early_stop_loss << " lr=";
    for (const auto& p : lr_schedule.pieces()) {
      os << (p.threshold == LrSchedule::kForever ? std::string("inf") : std::to_string(p.threshold)) << ':'
         << p.alpha << ';';
    }
    return os.str();
  }
};

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct LossParts {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l1 = 0.0;
  double l2 = 0.0;
  double loss = 0.0;
  double alpha = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = std::numeric_limits<std::size_t>::max();
  double best_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  bool early_stopped = false;
  std::string config_echo;
};

struct Provenance {
  std::string config_hash;
  double best_loss = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch = 0;
  std::size_t epochs = 0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  /// Config hash of the model this one was transferred from; empty for fresh training.
  std::string parent_hash;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// Network plus everything needed to query it later: the problem definition
/// (layout, domain, fixed parameters) and where it came from.
struct TrainedModel {
  PdeModel model;
  NetworkParams params;
  Provenance provenance;
};

struct TrainResult {
  TrainedModel model;
  TrainReport report;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainReport report) : Error(what), report_(std::move(report)) {}
  const TrainReport& report() const noexcept { return report_; }

 private:
  TrainReport report_;
};

namespace detail {

struct StencilPoint {
  std::vector<std::pair<std::size_t, double>> shifts;
};

/// centre, t+, t-, x+, x-, then for two-factor models v+, v-, (x+,v+), (x+,v-), (x-,v+), (x-,v-).
inline std::vector<StencilPoint> residual_stencil(const PdeModel& m, double h) {
  const std::size_t t = m.t_index(), x = m.x_index(), v = m.v_index();
  std::vector<StencilPoint> s = {{}, {{{t, h}}}, {{{t, -h}}}, {{{x, h}}}, {{{x, -h}}}};
  if (m.two_factor()) {
    s.push_back({{{v, h}}});
    s.push_back({{{v, -h}}});
    s.push_back({{{x, h}, {v, h}}});
    s.push_back({{{x, h}, {v, -h}}});
    s.push_back({{{x, -h}, {v, h}}});
    s.push_back({{{x, -h}, {v, -h}}});
  }
  return s;
}

inline void check_points(const Domain& domain, const Tensor& pts, const char* what) {
  if (pts.cols() != domain.dim()) {
    throw ShapeError(std::string(what) + ": points have " + std::to_string(pts.cols()) + " columns, model has " +
                     std::to_string(domain.dim()) + " inputs");
  }
  for (std::size_t r = 0; r < pts.rows(); ++r) {
    std::span<const double> p(&pts.data()[r * pts.cols()], pts.cols());
    if (!domain.contains(p, 1e-9)) {
      throw DomainError(std::string(what) + ": point " + std::to_string(r) + " lies outside the model domain");
    }
  }
}

inline std::string point_string(const Tensor& pts, std::size_t r) {
  std::ostringstream os;
  os << '(';
  for (std::size_t c = 0; c < pts.cols(); ++c) os << (c ? ", " : "") << pts(r, c);
  os << ')';
  return os.str();
}

}  // namespace detail

/// The mini-batch objective lambda * mean(residual^2) + mean((f(T, .) - indicator)^2)
/// recorded once on a tape for fixed batch sizes and replayed per mini-batch.
class LossGraph {
 public:
  LossGraph(const PdeModel& model, const NetworkShape& shape, std::size_t n_interior, std::size_t n_terminal,
            double fd_step, double lambda)
      : model_(model), shape_(shape), n_int_(n_interior), n_term_(n_terminal), h_(fd_step), lambda_(lambda) {
    if (n_int_ == 0 || n_term_ == 0) throw ConfigError("LossGraph: batch sizes must be positive");
    if (!(h_ > 0.0)) throw ConfigError("LossGraph: fd_step must be positive");
    if (shape_.input_dim != model_.input_dim()) throw ShapeError("LossGraph: network input_dim does not match model");
    stencil_ = detail::residual_stencil(model_, h_);
    build();
  }

  std::size_t interior_size() const noexcept { return n_int_; }
  std::size_t terminal_size() const noexcept { return n_term_; }
  double lambda() const noexcept { return lambda_; }

  LossParts forward(const NetworkParams& params, const Tensor& interior, const Tensor& terminal) {
    fill_inputs(interior, terminal);
    tape_.forward(inputs_, params.blocks);
    const Tensor& res = tape_.value(residual_);
    for (std::size_t i = 0; i < n_int_; ++i) {
      if (!std::isfinite(res[i])) {
        throw NumericError("minibatch_loss: non-finite residual at interior point " +
                           detail::point_string(interior, i));
      }
    }
    return {tape_.value(l1_).item(), tape_.value(l2_).item(), tape_.value(loss_).item()};
  }

  std::vector<Tensor> backward() { return tape_.backward(loss_); }

  /// Residual at each interior point of the last forward pass.
  const Tensor& residuals() const { return tape_.value(residual_); }

 private:
  void build() {
    const std::size_t d = model_.input_dim();
    const std::size_t S = stencil_.size();
    x_ = tape_.input("x", S * n_int_ + n_term_, d);
    const bool two = model_.two_factor();
    OperatorCoeffs<Var> c;
    c.x = tape_.input("c_x", n_int_, 1);
    c.xx = tape_.input("c_xx", n_int_, 1);
    if (two) {
      c.v = tape_.input("c_v", n_int_, 1);
      c.vv = tape_.input("c_vv", n_int_, 1);
      c.xv = tape_.input("c_xv", n_int_, 1);
    }
    target_ = tape_.input("target", n_term_, 1);
    auto params = register_parameters(tape_, shape_);
    Var f = network_output(tape_, params, x_, shape_);

    auto at = [&](std::size_t k) { return tape_.slice_rows(f, k * n_int_, n_int_); };
    const double inv2h = 1.0 / (2.0 * h_);
    const double invh2 = 1.0 / (h_ * h_);
    Var f0 = at(0);
    ModelDerivs<Var> dv;
    dv.t = (at(1) - at(2)) * inv2h;
    Var xp = at(3), xm = at(4);
    dv.x = (xp - xm) * inv2h;
    dv.xx = ((xp - f0) + (xm - f0)) * invh2;
    if (two) {
      Var vp = at(5), vm = at(6);
      dv.v = (vp - vm) * inv2h;
      dv.vv = ((vp - f0) + (vm - f0)) * invh2;
      dv.xv = ((at(7) - at(8)) - (at(9) - at(10))) * (0.25 * invh2);
    }
    residual_ = apply_operator(dv, c, two);
    l1_ = tape_.mean(tape_.square(residual_));
    Var ft = tape_.slice_rows(f, S * n_int_, n_term_);
    l2_ = tape_.mean(tape_.square(ft - target_));
    loss_ = tape_.add(tape_.scale(l1_, lambda_), l2_);

    inputs_.clear();
    inputs_.push_back(Tensor::matrix(S * n_int_ + n_term_, d));
    const std::size_t ncoef = two ? 5 : 2;
    for (std::size_t k = 0; k < ncoef; ++k) inputs_.push_back(Tensor::matrix(n_int_, 1));
    inputs_.push_back(Tensor::matrix(n_term_, 1));
  }

  void fill_inputs(const Tensor& interior, const Tensor& terminal) {
    const std::size_t d = model_.input_dim();
    if (interior.rows() != n_int_ || interior.cols() != d || terminal.rows() != n_term_ || terminal.cols() != d) {
      throw ShapeError("LossGraph: expected " + std::to_string(n_int_) + " interior and " + std::to_string(n_term_) +
                       " terminal points of dimension " + std::to_string(d));
    }
    Tensor& X = inputs_[0];
    const bool two = model_.two_factor();
    for (std::size_t k = 0; k < stencil_.size(); ++k) {
      for (std::size_t i = 0; i < n_int_; ++i) {
        const std::size_t row = k * n_int_ + i;
        for (std::size_t c = 0; c < d; ++c) X(row, c) = interior(i, c);
        for (auto [coord, delta] : stencil_[k].shifts) X(row, coord) += delta;
      }
    }
    for (std::size_t j = 0; j < n_term_; ++j) {
      for (std::size_t c = 0; c < d; ++c) X(stencil_.size() * n_int_ + j, c) = terminal(j, c);
    }
    for (std::size_t i = 0; i < n_int_; ++i) {
      std::span<const double> p(&interior.data()[i * d], d);
      const auto c = model_.coefficients(p);
      inputs_[1][i] = c.x;
      inputs_[2][i] = c.xx;
      if (two) {
        inputs_[3][i] = c.v;
        inputs_[4][i] = c.vv;
        inputs_[5][i] = c.xv;
      }
    }
    Tensor& target = inputs_.back();
    for (std::size_t j = 0; j < n_term_; ++j) {
      std::span<const double> p(&terminal.data()[j * d], d);
      target[j] = model_.terminal(p);
    }
  }

  PdeModel model_;
  NetworkShape shape_;
  std::size_t n_int_;
  std::size_t n_term_;
  double h_;
  double lambda_;
  std::vector<detail::StencilPoint> stencil_;
  Tape tape_;
  Var x_, target_, residual_, l1_, l2_, loss_;
  std::vector<Tensor> inputs_;
};

/// (L1, L2, L) of a network on given interior and terminal points.
inline LossParts minibatch_loss(const PdeModel& model, const NetworkParams& params, const Tensor& interior,
                                const Tensor& terminal, double lambda, double fd_step = 1e-4) {
  detail::check_points(model.domain(), interior, "minibatch_loss");
  detail::check_points(model.domain(), terminal, "minibatch_loss");
  LossGraph g(model, params.shape, interior.rows(), terminal.rows(), fd_step, lambda);
  return g.forward(params, interior, terminal);
}

/// Same objective for an arbitrary function, with derivatives supplied by
/// `derivs(point) -> ModelDerivs<double>` and values by `value(point) -> double`.
template <class DerivFn, class ValueFn>
LossParts minibatch_loss_with(const PdeModel& model, DerivFn&& derivs, ValueFn&& value, const Tensor& interior,
                              const Tensor& terminal, double lambda) {
  detail::check_points(model.domain(), interior, "minibatch_loss");
  detail::check_points(model.domain(), terminal, "minibatch_loss");
  const std::size_t d = model.input_dim();
  double s1 = 0.0;
  for (std::size_t i = 0; i < interior.rows(); ++i) {
    std::span<const double> p(&interior.data()[i * d], d);
    const double r = model.residual(derivs(p), p);
    if (!std::isfinite(r)) {
      throw NumericError("minibatch_loss: non-finite residual at interior point " + detail::point_string(interior, i));
    }
    s1 += r * r;
  }
  double s2 = 0.0;
  for (std::size_t j = 0; j < terminal.rows(); ++j) {
    std::span<const double> p(&terminal.data()[j * d], d);
    const double e = value(p) - model.terminal(p);
    s2 += e * e;
  }
  LossParts out;
  out.l1 = s1 / double(interior.rows());
  out.l2 = s2 / double(terminal.rows());
  out.total = lambda * out.l1 + out.l2;
  return out;
}

/// Objective for a plain function with central-difference derivatives.
template <class Fn>
  requires std::is_invocable_r_v<double, Fn, std::span<const double>>
LossParts minibatch_loss(const PdeModel& model, Fn&& f, const Tensor& interior, const Tensor& terminal, double lambda,
                         double fd_step = 1e-4) {
  const auto req = model.derivative_request();
  const bool two = model.two_factor();
  return minibatch_loss_with(
      model, [&](std::span<const double> p) { return PdeModel::unpack(input_derivs(f, p, req, fd_step), two); },
      [&](std::span<const double> p) { return f(p); }, interior, terminal, lambda);
}

struct MiniBatch {
  Tensor interior;
  Tensor terminal;
};

/// The mini-batches drawn in `epoch`; a pure function of (model domain, config seed, epoch).
inline std::vector<MiniBatch> epoch_batches(const PdeModel& model, const TrainConfig& cfg, std::size_t epoch) {
  auto rng_int = epoch_stream(cfg.seed, epoch, SampleStream::Interior);
  auto rng_term = epoch_stream(cfg.seed, epoch, SampleStream::Terminal);
  const Domain interior_domain = model.interior_sampling_domain();
  const std::size_t n = cfg.batch.points_per_minibatch();
  std::vector<MiniBatch> out;
  out.reserve(cfg.batch.minibatches_per_epoch);
  for (std::size_t b = 0; b < cfg.batch.minibatches_per_epoch; ++b) {
    MiniBatch mb;
    mb.interior = sample_interior(interior_domain, n, rng_int);
    mb.terminal = sample_terminal(model.domain(), n, rng_term);
    out.push_back(std::move(mb));
  }
  return out;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline TrainResult run_training(const PdeModel& model, const TrainConfig& cfg, NetworkParams params,
                                std::string parent_hash, const EpochCallback& on_epoch) {
  cfg.validate();
  params.validate();
  if (params.shape.input_dim != model.input_dim()) throw ShapeError("train: network input_dim does not match model");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.config_echo = cfg.describe();
  const auto names = params.block_names();

  const std::size_t n = cfg.batch.points_per_minibatch();
  LossGraph graph(model, params.shape, n, n, cfg.fd_step, cfg.lambda);
  AdamState adam = AdamState::zeros_like(params.blocks);
  NetworkParams best = params;
  std::size_t step = 0;

  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(model, cfg, epoch);
    LossParts train_sum;
    double alpha = 0.0;
    for (const auto& mb : batches) {
      const LossParts lp = graph.forward(params, mb.interior, mb.terminal);
      if (!std::isfinite(lp.total) || lp.total > cfg.divergence_limit) {
        report.steps = step;
        report.wall_seconds = elapsed();
        std::ostringstream os;
        os << "train: loss diverged (L = " << lp.total << ") at epoch " << epoch << ", step " << step + 1;
        throw TrainingDiverged(os.str(), std::move(report));
      }
      train_sum.l1 += lp.l1;
      train_sum.l2 += lp.l2;
      train_sum.total += lp.total;
      const auto grads = graph.backward();
      alpha = cfg.lr_schedule.at(++step);
      adam_step(params.blocks, grads, adam, alpha, cfg.adam, names);
    }

    EpochRecord rec{epoch, 0.0, 0.0, 0.0, alpha};
    const double nb = double(batches.size());
    if (cfg.checkpoint == CheckpointPolicy::LowestLoss) {
      LossParts s;
      for (const auto& mb : batches) {
        const LossParts lp = graph.forward(params, mb.interior, mb.terminal);
        s.l1 += lp.l1;
        s.l2 += lp.l2;
        s.total += lp.total;
      }
      rec.l1 = s.l1 / nb;
      rec.l2 = s.l2 / nb;
      rec.loss = s.total / nb;
      if (!(rec.loss >= report.best_loss)) {
        report.best_loss = rec.loss;
        report.best_epoch = epoch;
        best = params;
      }
    } else {
      rec.l1 = train_sum.l1 / nb;
      rec.l2 = train_sum.l2 / nb;
      rec.loss = train_sum.total / nb;
      report.best_loss = rec.loss;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cfg.early_stop_loss > 0.0 && rec.loss < cfg.early_stop_loss) {
      report.early_stopped = true;
      break;
    }
  }
  if (cfg.checkpoint == CheckpointPolicy::Last) best = params;

  report.steps = step;
  report.wall_seconds = elapsed();

  TrainResult out{TrainedModel{model, std::move(best), {}}, std::move(report)};
  auto& prov = out.model.provenance;
  prov.config_hash = fnv1a_hex(cfg.describe() + " model=" + model.name());
  prov.best_loss = out.report.best_loss;
  prov.best_epoch = out.report.epochs.empty() ? 0 : out.report.best_epoch;
  prov.epochs = out.report.epochs.size();
  prov.lambda = cfg.lambda;
  prov.seed = cfg.seed;
  prov.parent_hash = std::move(parent_hash);
  return out;
}

}  // namespace detail

/// DGM training from a Xavier initialization seeded by `cfg.seed`.
inline TrainResult train(const PdeModel& model, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  NetworkShape shape{model.input_dim(), cfg.width, cfg.layers};
  return detail::run_training(model, cfg, init_xavier(shape, cfg.seed), {}, on_epoch);
}

/// Continues training `base` on `model`, whose domain may differ but whose
/// layout must match. The network shape is the base's; cfg.width and
/// cfg.layers are ignored. For time-homogeneous models the time input is
/// re-anchored so that equal time-to-maturity maps to equal network output
/// when the horizon changes.
inline TrainResult transfer(const PdeModel& model, const TrainedModel& base, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {}) {
  if (model.kind() != base.model.kind() || model.layout() != base.model.layout()) {
    throw ConfigError("transfer: layout mismatch between base model (" + base.model.name() + ", " +
                      std::to_string(base.model.input_dim()) + " inputs) and target (" + model.name() + ", " +
                      std::to_string(model.input_dim()) + " inputs)");
  }
  NetworkParams start = base.params;
  const double shift = base.model.domain().horizon() - model.domain().horizon();
  if (model.time_homogeneous() && shift != 0.0) start = shift_time_input(std::move(start), shift);
  return detail::run_training(model, cfg, std::move(start), base.provenance.config_hash, on_epoch);
}

/// CSV loss log: a commented config echo, then one row per epoch.
inline void write_loss_log(std::ostream& os, const TrainReport& report, const std::string& header_comment = {}) {
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    for (std::string line; std::getline(lines, line);) os << "# " << line << '\n';
  }
  os << "# train: " << report.config_echo << '\n';
  os << "epoch,L1,L2,L,alpha\n";
  os << std::setprecision(10);
  for (const auto& r : report.epochs) {
    os << r.epoch << ',' << r.l1 << ',' << r.l2 << ',' << r.loss << ',' << r.alpha << '\n';
  }
}

}  // namespace kdgm
