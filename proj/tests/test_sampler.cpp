#include <gtest/gtest.h>

#include <cmath>

#include "kdgm/pde_models.hpp"
#include "kdgm/sampler.hpp"

using namespace kdgm;

namespace {

Domain box() { return Domain({"t", "x", "y", "sigma"}, {{0.0, 1.1}, {-1.0, 1.0}, {-0.5, 2.0}, {0.15, 0.35}}); }

}  // namespace

TEST(SampleInterior, WithinBounds) {
  std::mt19937_64 rng(1);
  const auto d = box();
  const auto pts = sample_interior(d, 5000, rng);
  ASSERT_EQ(pts.rows(), 5000u);
  for (std::size_t r = 0; r < pts.rows(); ++r) {
    for (std::size_t c = 0; c < d.dim(); ++c) {
      EXPECT_GE(pts(r, c), d[c].lo);
      EXPECT_LE(pts(r, c), d[c].hi);
    }
  }
}

TEST(SampleInterior, SameSeedSamePoints) {
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(sample_interior(box(), 100, a).storage(), sample_interior(box(), 100, b).storage());
}

TEST(SampleInterior, MeansWithinCltBound) {
  std::mt19937_64 rng(3);
  const auto d = box();
  const std::size_t n = 100000;
  const auto pts = sample_interior(d, n, rng);
  for (std::size_t c = 0; c < d.dim(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += pts(r, c);
    const double tol = 3.0 * d[c].width() / std::sqrt(12.0 * double(n));
    EXPECT_NEAR(s / double(n), d[c].mid(), tol) << d.names()[c];
  }
}

TEST(SampleTerminal, TimePinnedToHorizon) {
  std::mt19937_64 rng(4);
  const auto d = box();
  const std::size_t n = 100000;
  const auto pts = sample_terminal(d, n, rng);
  for (std::size_t r = 0; r < n; ++r) ASSERT_EQ(pts(r, 0), 1.1);
  for (std::size_t c = 1; c < d.dim(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += pts(r, c);
    EXPECT_NEAR(s / double(n), d[c].mid(), 3.0 * d[c].width() / std::sqrt(12.0 * double(n)));
  }
}

TEST(Sampler, ZeroCountRejected) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_interior(box(), 0, rng), ConfigError);
  EXPECT_THROW(sample_terminal(box(), 0, rng), ConfigError);
}

TEST(BatchPlan, SplitsEvenly) {
  BatchPlan p{1000, 5};
  EXPECT_EQ(p.points_per_minibatch(), 200u);
  EXPECT_THROW((BatchPlan{1000, 3}).validate(), ConfigError);
  EXPECT_THROW((BatchPlan{0, 1}).validate(), ConfigError);
}

TEST(EpochStream, IndependentPerEpochAndStream) {
  auto a = epoch_stream(1, 0, SampleStream::Interior);
  auto b = epoch_stream(1, 1, SampleStream::Interior);
  auto c = epoch_stream(1, 0, SampleStream::Terminal);
  auto a2 = epoch_stream(1, 0, SampleStream::Interior);
  const auto va = a();
  EXPECT_EQ(va, a2());
  EXPECT_NE(va, b());
  EXPECT_NE(va, c());
}
