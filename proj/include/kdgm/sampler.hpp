#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "kdgm/error.hpp"
#include "kdgm/oracles.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/tensor.hpp"

namespace kdgm {

/// Epoch layout: points_per_epoch interior points (and as many terminal
/// points) split evenly into minibatches_per_epoch mini-batches.
struct BatchPlan {
  std::size_t points_per_epoch = 5000;
  std::size_t minibatches_per_epoch = 5;

  std::size_t points_per_minibatch() const { return points_per_epoch / minibatches_per_epoch; }

  void validate() const {
    if (points_per_epoch == 0 || minibatches_per_epoch == 0) {
      throw ConfigError("BatchPlan: points_per_epoch and minibatches_per_epoch must be positive");
    }
    if (points_per_epoch % minibatches_per_epoch != 0) {
      throw ConfigError("BatchPlan: points_per_epoch must be divisible by minibatches_per_epoch");
    }
  }
};

enum class SampleStream : std::uint64_t { Interior = 1, Terminal = 2 };

/// Generator for one (seed, epoch, stream) triple. Resuming at epoch k
/// reproduces the samples of an uninterrupted run.
inline std::mt19937_64 epoch_stream(std::uint64_t seed, std::size_t epoch, SampleStream stream) {
  return std::mt19937_64(mix_seed(seed, epoch, std::uint64_t(stream)));
}

/// n i.i.d. points, uniform per coordinate over `domain` (time over [0, T]).
inline Tensor sample_interior(const Domain& domain, std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw ConfigError("sample_interior: n must be positive");
  const std::size_t d = domain.dim();
  Tensor pts = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      std::uniform_real_distribution<double> u(domain[c].lo, domain[c].hi);
      pts(r, c) = u(rng);
    }
  }
  return pts;
}

/// n points with t pinned at the horizon T and the rest uniform over `domain`.
inline Tensor sample_terminal(const Domain& domain, std::size_t n, std::mt19937_64& rng) {
  if (n == 0) throw ConfigError("sample_terminal: n must be positive");
  const std::size_t d = domain.dim();
  const double T = domain.horizon();
  Tensor pts = Tensor::matrix(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    pts(r, 0) = T;
    for (std::size_t c = 1; c < d; ++c) {
      std::uniform_real_distribution<double> u(domain[c].lo, domain[c].hi);
      pts(r, c) = u(rng);
    }
  }
  return pts;
}

}  // namespace kdgm
