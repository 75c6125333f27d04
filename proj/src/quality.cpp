#include "spider/quality.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace spider {

LooObservations loo_observations(const StateWindow& window, const Reconstructor& reconstructor) {
  const SparseMeasurement& now = window.current();
  LooObservations obs;
  const auto& bits = now.mask().bits();
  for (Eigen::Index c = 0; c < bits.size(); ++c)
    if (bits.data()[c]) obs.cells.push_back(static_cast<int>(c));
  if (obs.cells.size() < 2)
    throw Error(Errc::insufficient_data, "leave-one-out needs at least two collected values, got " +
                                             std::to_string(obs.cells.size()));
  std::vector<StateWindow> held_out;
  held_out.reserve(obs.cells.size());
  for (int c : obs.cells) held_out.push_back(window.with_current(now.without(c)));
  const std::vector<Grid> est = reconstructor.reconstruct_batch(held_out);
  for (std::size_t k = 0; k < obs.cells.size(); ++k) {
    const int c = obs.cells[k];
    obs.y.push_back(now.values().data()[c]);
    obs.y_hat.push_back(est[k].data()[c]);
    obs.o.push_back(std::abs(obs.y_hat.back() - obs.y.back()));
  }
  return obs;
}

double bootstrap_estimate(const LooObservations& obs, double epsilon, int m, std::uint64_t seed) {
  if (obs.o.empty()) throw Error(Errc::empty_input, "bootstrap over no observations");
  if (m < 1) throw Error(Errc::config, "bootstrap needs m >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, obs.o.size() - 1);
  const double n = static_cast<double>(obs.o.size());
  int hits = 0;
  for (int r = 0; r < m; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < obs.o.size(); ++k) sum += obs.o[pick(rng)];
    if (sum / n <= epsilon) ++hits;
  }
  return static_cast<double>(hits) / m;
}

double normal_posterior_estimate(const LooObservations& obs, double epsilon) {
  const auto n = obs.o.size();
  if (n < 2) throw Error(Errc::insufficient_data, "normal estimate needs at least two observations");
  double mean = 0.0;
  for (double v : obs.o) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : obs.o) ss += (v - mean) * (v - mean);
  const double se = std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
  if (se == 0.0) return mean <= epsilon ? 1.0 : 0.0;
  return 0.5 * std::erfc(-(epsilon - mean) / (se * std::numbers::sqrt2));
}

bool quality_gate(const LooObservations& obs, const QualityConfig& config, int m, std::uint64_t seed) {
  config.validate();
  return bootstrap_estimate(obs, config.epsilon, m, seed) > config.beta;
}

}  // namespace spider
