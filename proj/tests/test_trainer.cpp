#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "kdgm/oracles.hpp"
#include "kdgm/trainer.hpp"

using namespace kdgm;

namespace {

Domain toy_domain() { return Domain({"t", "x", "y", "sigma"}, {{0.0, 1.1}, {-1.0, 1.0}, {-1.0, 1.0}, {0.15, 0.35}}); }

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch = {100, 5};
  c.width = 8;
  c.layers = 1;
  c.lr_schedule = LrSchedule::constant(1e-3);
  return c;
}

Tensor draw_interior(const PdeModel& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_interior(m.interior_sampling_domain(), n, rng);
}

Tensor draw_terminal(const PdeModel& m, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_terminal(m.domain(), n, rng);
}

}  // namespace

TEST(LrSchedule, StandardBoundaries) {
  const auto s = LrSchedule::standard();
  EXPECT_EQ(s.at(1), 1e-4);
  EXPECT_EQ(s.at(5000), 1e-4);
  EXPECT_EQ(s.at(5001), 5e-5);
  EXPECT_EQ(s.at(10000), 5e-5);
  EXPECT_EQ(s.at(10001), 1e-5);
  EXPECT_EQ(s.at(50001), 1e-7);
  EXPECT_EQ(s.at(200000), 5e-8);
  EXPECT_EQ(s.at(200001), 1e-8);
  EXPECT_EQ(s.at(10000000), 1e-8);
  EXPECT_EQ(s.pieces().size(), 9u);
}

TEST(LrSchedule, Validation) {
  EXPECT_THROW(LrSchedule({{10, 1e-3}, {5, 1e-4}}), ConfigError);
  EXPECT_THROW(LrSchedule({{10, 1e-3}, {20, 1e-2}}), ConfigError);
  EXPECT_THROW(LrSchedule({{10, 0.0}}), ConfigError);
  EXPECT_THROW(LrSchedule(std::vector<LrSchedule::Piece>{}), ConfigError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lambda = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.fd_step = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MinibatchLoss, ZeroNetworkGivesHalfTerminalMass) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto p = zero_params({4, 8, 1});
  const std::size_t n = 20000;
  const auto lp = minibatch_loss(m, p, draw_interior(m, 10, 1), draw_terminal(m, n, 2), 10.0);
  EXPECT_EQ(lp.l1, 0.0);
  // Indicator squared has mean P(x <= y) = 1/2 for exchangeable x, y.
  EXPECT_NEAR(lp.l2, 0.5, 3.0 * 0.5 / std::sqrt(double(n)));
}

TEST(MinibatchLoss, ExactCdfHasNoResidual) {
  const auto m = PdeModel::gbm(toy_domain());
  const double H = m.domain().horizon();
  auto derivs = [&](std::span<const double> p) { return gbm_cdf_derivatives(H - p[0], p[1], p[2], p[3]); };
  auto value = [&](std::span<const double> p) {
    const double tau = H - p[0];
    return tau > 0.0 ? gbm_cdf(tau, p[1], p[2], p[3]) : terminal_indicator_1d(p[1], p[2]);
  };
  // Keep interior points away from the terminal kink.
  Domain d = toy_domain();
  d[0].hi = H - 0.05;
  std::mt19937_64 rng(3);
  const auto interior = sample_interior(d, 1000, rng);
  const auto lp = minibatch_loss_with(m, derivs, value, interior, draw_terminal(m, 100, 4), 10.0);
  EXPECT_LE(lp.l1, 1e-8);
  EXPECT_EQ(lp.l2, 0.0);
}

TEST(MinibatchLoss, LambdaEntersLinearly) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto p = init_xavier({4, 8, 2}, 3);
  const auto in = draw_interior(m, 200, 5);
  const auto term = draw_terminal(m, 200, 6);
  const auto a = minibatch_loss(m, p, in, term, 1.0);
  const auto b = minibatch_loss(m, p, in, term, 10.0);
  EXPECT_EQ(a.l1, b.l1);
  EXPECT_EQ(a.l2, b.l2);
  EXPECT_NEAR(b.total - a.total, 9.0 * a.l1, 1e-15 * b.total);
}

TEST(MinibatchLoss, GraphMatchesFunctionPath) {
  const auto m = PdeModel::heston(PdeModel::heston_default_domain());
  const auto p = init_xavier({9, 6, 1}, 4);
  const auto in = draw_interior(m, 20, 7);
  const auto term = draw_terminal(m, 20, 8);
  const auto a = minibatch_loss(m, p, in, term, 100.0);
  const auto b = minibatch_loss(m, [&](std::span<const double> q) { return eval(p, q); }, in, term, 100.0);
  // Both paths difference the same values; only second-difference round-off
  // (about eps / h^2) separates them.
  EXPECT_NEAR(a.l1, b.l1, 1e-7 * std::max(1.0, a.l1));
  EXPECT_NEAR(a.l2, b.l2, 1e-12);
}

TEST(MinibatchLoss, RejectsPointsOutsideDomain) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto p = init_xavier({4, 8, 1}, 3);
  auto in = draw_interior(m, 10, 1);
  in(3, 1) = 5.0;
  EXPECT_THROW(minibatch_loss(m, p, in, draw_terminal(m, 10, 2), 10.0), DomainError);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const auto m = PdeModel::gbm(toy_domain());
  auto cfg = small_config(0);
  const auto r = train(m, cfg);
  EXPECT_EQ(r.model.params, init_xavier({4, cfg.width, cfg.layers}, cfg.seed));
  EXPECT_TRUE(r.report.epochs.empty());
  EXPECT_EQ(r.report.steps, 0u);
}

TEST(Train, Deterministic) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto cfg = small_config(5);
  const auto a = train(m, cfg);
  const auto b = train(m, cfg);
  ASSERT_EQ(a.report.epochs.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.report.epochs[i].loss, b.report.epochs[i].loss);
    EXPECT_EQ(a.report.epochs[i].l1, b.report.epochs[i].l1);
  }
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.model.provenance, b.model.provenance);
  EXPECT_EQ(a.report.steps, 25u);
}

TEST(Train, LowestLossCheckpointKeepsBestEpoch) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto cfg = small_config(20);
  const auto r = train(m, cfg);
  double best = r.report.epochs.front().loss;
  std::size_t at = 0;
  for (const auto& e : r.report.epochs) {
    if (e.loss < best) {
      best = e.loss;
      at = e.epoch;
    }
  }
  EXPECT_EQ(r.report.best_loss, best);
  EXPECT_EQ(r.report.best_epoch, at);
  // The kept parameters reproduce that epoch's loss on its own mini-batches.
  double s = 0.0;
  const auto batches = epoch_batches(m, cfg, at);
  for (const auto& mb : batches) s += minibatch_loss(m, r.model.params, mb.interior, mb.terminal, cfg.lambda).total;
  EXPECT_NEAR(s / double(batches.size()), best, 1e-12);
}

TEST(Train, EarlyStop) {
  const auto m = PdeModel::gbm(toy_domain());
  auto cfg = small_config(50);
  cfg.early_stop_loss = 1e9;
  const auto r = train(m, cfg);
  EXPECT_TRUE(r.report.early_stopped);
  EXPECT_EQ(r.report.epochs.size(), 1u);
}

TEST(Train, DivergenceIsReported) {
  const auto m = PdeModel::gbm(toy_domain());
  auto cfg = small_config(3);
  cfg.divergence_limit = 1e-6;
  EXPECT_THROW(train(m, cfg), TrainingDiverged);
}

TEST(Train, LossLogHasOneRowPerEpoch) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto r = train(m, small_config(7));
  std::ostringstream os;
  write_loss_log(os, r.report, "config line");
  std::istringstream is(os.str());
  std::size_t rows = 0;
  bool header = false;
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("#", 0) == 0) continue;
    if (!header) {
      EXPECT_EQ(line, "epoch,L1,L2,L,alpha");
      header = true;
      continue;
    }
    ++rows;
  }
  EXPECT_EQ(rows, 7u);
}

// Training progress on the toy GBM box: 2,000 epochs cut the loss on a fixed
// held-out set by at least 10x.
TEST(Train, ToyDomainLossDropsTenfold) {
  const auto m = PdeModel::gbm(toy_domain());
  auto cfg = small_config(2000);
  cfg.width = 10;
  cfg.batch = {50, 5};
  cfg.lr_schedule = LrSchedule({{5000, 3e-3}, {LrSchedule::kForever, 1e-3}});
  const auto in = draw_interior(m, 2000, 91);
  const auto term = draw_terminal(m, 2000, 92);
  const auto init = init_xavier({4, cfg.width, cfg.layers}, cfg.seed);
  const double before = minibatch_loss(m, init, in, term, cfg.lambda).total;
  const auto r = train(m, cfg);
  const double after = minibatch_loss(m, r.model.params, in, term, cfg.lambda).total;
  EXPECT_LE(after * 10.0, before) << "before " << before << " after " << after;
  std::cout << "toy loss before " << before << " after " << after << "\n";
}

TEST(Transfer, ZeroEpochsKeepsBaseParams) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto base = train(m, small_config(3)).model;
  Domain narrow = toy_domain();
  narrow[1] = {-0.5, 0.5};
  narrow[2] = {-0.5, 0.5};
  const auto r = transfer(PdeModel::gbm(narrow), base, small_config(0));
  EXPECT_EQ(r.model.params, base.params);
  EXPECT_EQ(r.model.provenance.parent_hash, base.provenance.config_hash);
}

TEST(Transfer, ShorterHorizonKeepsTimeToMaturity) {
  const auto m = PdeModel::gbm(toy_domain());
  const auto base = train(m, small_config(3)).model;
  Domain shorter = toy_domain();
  shorter[0].hi = 0.12;
  const auto r = transfer(PdeModel::gbm(shorter), base, small_config(0));
  // Network time is measured so that equal time to maturity gives equal output.
  for (double tau : {0.0, 0.05, 0.12}) {
    const std::vector<double> a{0.12 - tau, 0.1, 0.2, 0.25};
    const std::vector<double> b{1.1 - tau, 0.1, 0.2, 0.25};
    EXPECT_NEAR(eval(r.model.params, a), eval(base.params, b), 1e-13);
  }
}

TEST(Transfer, RejectsDifferentLayout) {
  const auto base = train(PdeModel::gbm(toy_domain()), small_config(1)).model;
  EXPECT_THROW(transfer(PdeModel::heston(PdeModel::heston_default_domain()), base, small_config(1)), ConfigError);
}
