#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kdgm/density.hpp"
#include "kdgm/oracles.hpp"

using namespace kdgm;

namespace {

PdeModel gbm_model() { return PdeModel::gbm(PdeModel::gbm_default_domain()); }

// The exact GBM CDF in network layout: network time t_n means time to
// maturity H - t_n.
CdfSource exact_gbm() {
  const auto m = gbm_model();
  const double H = m.domain().horizon();
  return CdfSource::from_function(m, [H](std::span<const double> p) { return gbm_cdf(H - p[0], p[1], p[2], p[3]); });
}

CdfSource heston_product_hook() {
  return CdfSource::from_function(PdeModel::heston(PdeModel::heston_default_domain()),
                                  [](std::span<const double> p) { return normal_cdf(p[2]) * normal_cdf(p[4]); });
}

}  // namespace

TEST(Density1d, ExactCdfAtModeMatchesPeak) {
  // The mode sits at y = x - sigma^2 T / 2, where the density is 1/(sigma sqrt(2 pi T)).
  const double sigma = 0.25, T = 1.0, x = 0.0;
  const double peak = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi * T));
  EXPECT_NEAR(peak, 1.59577, 1e-5);
  const double D = 0.005;
  const double p = density_1d(exact_gbm(), 0.0, x, T, x - 0.5 * sigma * sigma * T, sigma, {D});
  EXPECT_NEAR(p, peak, 10.0 * D * D);
}

TEST(Density1d, ExactCdfAtStartPoint) {
  // At y = x the drift offsets the argument: value is peak * exp(-sigma^2 T / 8).
  const double p = density_1d(exact_gbm(), 0.0, 0.0, 1.0, 0.0, 0.25);
  EXPECT_NEAR(p, gaussian_density(0.0, 1.0, 0.0, 0.25), 2.5e-4);
  EXPECT_NEAR(gaussian_density(0.0, 1.0, 0.0, 0.25), 1.5833507, 1e-6);
}

TEST(Density1d, ConstantCdfGivesZero) {
  const auto c = CdfSource::from_function(gbm_model(), [](std::span<const double>) { return 0.3; });
  EXPECT_EQ(density_1d(c, 0.0, 0.0, 1.0, 0.2, 0.25), 0.0);
}

TEST(Density1d, FarTailIsNegligible) {
  const double sigma = 0.25, T = 1.0;
  const double mode = -0.5 * sigma * sigma * T;
  for (double s : {-1.0, 1.0}) {
    const double y = mode + s * 5.0 * sigma * std::sqrt(T);
    EXPECT_LE(density_1d(exact_gbm(), 0.0, 0.0, T, y, sigma), 1e-5);
  }
}

TEST(Density1d, DecreasingCdfIsClampedAndCounted) {
  const auto c = CdfSource::from_function(gbm_model(), [](std::span<const double> p) { return -p[2]; });
  DensityStats stats;
  EXPECT_EQ(density_1d(c, 0.0, 0.0, 1.0, 0.1, 0.25, {}, &stats), 0.0);
  EXPECT_EQ(stats.clamped, 1u);
  EXPECT_EQ(stats.evaluations, 1u);
  DensityConfig raw;
  raw.clamp_negative = false;
  EXPECT_NEAR(density_1d(c, 0.0, 0.0, 1.0, 0.1, 0.25, raw), -1.0, 1e-9);
}

TEST(Density1d, GridMatchesPointwise) {
  const std::vector<double> ys{-0.5, 0.0, 0.3};
  const auto g = density_1d_grid(exact_gbm(), 0.2, 0.1, 1.0, 0.3, ys);
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_DOUBLE_EQ(g[i], density_1d(exact_gbm(), 0.2, 0.1, 1.0, ys[i], 0.3));
}

TEST(Density1d, DeltaHalvingQuartersError) {
  const double sigma = 0.3, T = 0.5, y = 0.2;
  const double exact = gaussian_density(0.0, T, y, sigma);
  const double e1 = std::abs(density_1d(exact_gbm(), 0.0, 0.0, T, y, sigma, {0.02}) - exact);
  const double e2 = std::abs(density_1d(exact_gbm(), 0.0, 0.0, T, y, sigma, {0.01}) - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.2);
}

TEST(Density1d, OutOfDomainRejectedWithHint) {
  try {
    density_1d(exact_gbm(), 0.0, 0.0, 1.0, 2.4, 0.25);
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("transfer"), std::string::npos) << e.what();
  }
  EXPECT_THROW(density_1d(exact_gbm(), 0.0, 0.0, 5.0, 0.0, 0.25), DomainError);
  EXPECT_THROW(density_1d(exact_gbm(), 0.0, 0.0, 1.0, 0.0, 0.9), DomainError);
}

TEST(Density1d, RejectsNonPositiveDelta) {
  EXPECT_THROW(density_1d(exact_gbm(), 0.0, 0.0, 1.0, 0.0, 0.25, {0.0}), ConfigError);
  EXPECT_TRUE(DensityConfig{}.delta_recommended());
  EXPECT_FALSE(DensityConfig{0.05}.delta_recommended());
}

TEST(Density1d, WrongLayoutRejected) {
  EXPECT_THROW(density_1d(heston_product_hook(), 0.0, 0.0, 1.0, 0.0, 0.25), ConfigError);
}

TEST(Density2d, ProductHookGivesProductDensity) {
  const double D = 0.005;
  for (auto [y, z] : {std::pair{0.0, 0.5}, std::pair{-0.4, 0.2}, std::pair{1.0, 0.8}}) {
    const double p = density_2d(heston_product_hook(), 0.0, 0.0, 0.2, 1.0, y, z, {}, {D});
    EXPECT_NEAR(p, normal_pdf(y) * normal_pdf(z), D * D) << y << "," << z;
  }
}

TEST(Density2d, ConstantHookGivesZero) {
  const auto c = CdfSource::from_function(PdeModel::heston(PdeModel::heston_default_domain()),
                                          [](std::span<const double>) { return 0.7; });
  EXPECT_EQ(density_2d(c, 0.0, 0.0, 0.2, 1.0, 0.0, 0.5, {}), 0.0);
}

TEST(Density2d, DecreasingHookClamped) {
  const auto c = CdfSource::from_function(PdeModel::heston(PdeModel::heston_default_domain()),
                                          [](std::span<const double> p) { return -p[2] * p[4]; });
  DensityStats stats;
  EXPECT_EQ(density_2d(c, 0.0, 0.0, 0.2, 1.0, 0.0, 0.5, {}, {}, &stats), 0.0);
  EXPECT_EQ(stats.clamped, 1u);
}

TEST(Density2d, GridIsRowMajorInY) {
  const std::vector<double> ys{-0.2, 0.3};
  const std::vector<double> zs{0.1, 0.4, 0.6};
  const auto g = density_2d_grid(heston_product_hook(), 0.0, 0.0, 0.2, 1.0, ys, zs, {});
  ASSERT_EQ(g.size(), 6u);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(g[i * 3 + j], density_2d(heston_product_hook(), 0.0, 0.0, 0.2, 1.0, ys[i], zs[j], {}));
    }
  }
}

TEST(Density2d, TdHestonRequiresFullHorizon) {
  const auto c = CdfSource::from_function(PdeModel::td_heston(PdeModel::td_heston_default_domain()),
                                          [](std::span<const double> p) { return normal_cdf(p[2]) * p[4]; });
  EXPECT_NO_THROW(density_2d(c, 0.0, 0.0, 0.04, 1.2, 0.0, 0.05, {}));
  EXPECT_THROW(density_2d(c, 0.0, 0.0, 0.04, 1.0, 0.0, 0.05, {}), DomainError);
}

TEST(Density2d, OutOfDomainVariance) {
  EXPECT_THROW(density_2d(heston_product_hook(), 0.0, 0.0, 0.2, 1.0, 0.0, 1.5, {}), DomainError);
}
