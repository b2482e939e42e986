#pragma once

#include <cmath>
#include <random>

#include "dvgp/model.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

/// Seeded synthetic fixtures used by the experiment harnesses and tests.

/// y = sin(x) + noise on a jittered grid over [-3, 3].
inline Dataset make_sine_regression(Index n, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(n, 1), y(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double t = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    x(i, 0) = t + 0.02 * gauss(rng);
    y(i, 0) = std::sin(x(i, 0)) + noise_sd * gauss(rng);
  }
  Dataset data;
  data.y = y;
  data.x = x;
  return data;
}

/// Flat-then-steep step on [-3, 3]: nearly constant on the outer thirds
/// with all the variation concentrated near the origin, so a good sparse
/// fit has to spend its inducing points in the middle of the range.
inline Dataset make_kink_regression(Index n, double noise_sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(n, 1), y(n, 1);
  for (Index i = 0; i < n; ++i) {
    const double t = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    x(i, 0) = t;
    y(i, 0) = 2.0 / (1.0 + std::exp(-8.0 * t)) - 1.0 + 0.05 * t + noise_sd * gauss(rng);
  }
  Dataset data;
  data.y = y;
  data.x = x;
  return data;
}

/// Outputs living on a one-dimensional curve embedded in d dimensions,
/// standardized per column; the intrinsic dimension is 1 no matter what
/// latent dimension a model is given.
inline Dataset make_latent_curve(Index n, Index d, double noise_sd, std::uint64_t seed) {
  require(d >= 2, "make_latent_curve: need at least two output dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix y(n, d);
  for (Index i = 0; i < n; ++i) {
    const double t = -2.0 + 4.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    for (Index c = 0; c < d; ++c) {
      double value = 0.0;
      switch (c % 5) {
        case 0: value = std::sin(1.5 * t); break;
        case 1: value = std::cos(1.5 * t); break;
        case 2: value = 0.5 * t; break;
        case 3: value = std::tanh(2.0 * t); break;
        default: value = std::sin(0.75 * t + 0.5); break;
      }
      y(i, c) = value + noise_sd * gauss(rng);
    }
  }
  for (Index c = 0; c < d; ++c) {
    const double mean = y.col(c).mean();
    const double sd = std::sqrt((y.col(c).array() - mean).square().sum() /
                                static_cast<double>(n - 1));
    y.col(c) = (y.col(c).array() - mean) / (sd > 1e-12 ? sd : 1.0);
  }
  Dataset data;
  data.y = y;
  return data;
}

}  // namespace dvgp
