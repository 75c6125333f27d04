#ifndef SPIDER_QUALITY_HPP
#define SPIDER_QUALITY_HPP

#include "spider/core.hpp"
#include "spider/reconstructor.hpp"

#include <cstdint>
#include <vector>

namespace spider {

/// Leave-one-out residuals for the collected values of one frame, in row-major cell order.
struct LooObservations {
  std::vector<int> cells;
  std::vector<double> y;
  std::vector<double> y_hat;
  std::vector<double> o;  // |y_hat - y|

  int size() const { return static_cast<int>(o.size()); }
};

/// Withholds each sampled cell of the current frame in turn and records what `reconstructor`
/// infers there. Throws Errc::insufficient_data for fewer than two sampled cells.
LooObservations loo_observations(const StateWindow& window, const Reconstructor& reconstructor);

/// Share of `m` with-replacement resample means of the residuals that are <= epsilon.
double bootstrap_estimate(const LooObservations& obs, double epsilon, int m = 10000, std::uint64_t seed = 0);

/// Normal approximation of P(e <= epsilon) from the residual mean and its standard error.
double normal_posterior_estimate(const LooObservations& obs, double epsilon);

/// True when the bootstrap estimate at config.epsilon is strictly above config.beta.
bool quality_gate(const LooObservations& obs, const QualityConfig& config, int m = 10000, std::uint64_t seed = 0);

}  // namespace spider

#endif  // SPIDER_QUALITY_HPP
