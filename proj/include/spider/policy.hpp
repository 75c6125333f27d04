#ifndef SPIDER_POLICY_HPP
#define SPIDER_POLICY_HPP

#include "spider/agent.hpp"
#include "spider/mtrnet.hpp"
#include "spider/networks.hpp"
#include "spider/report.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace spider {

struct PolicyConfig {
  /// Same topology as MTRNet, conditioned on time features, with a sigmoid on the output.
  nn::ConvNetConfig net = [] {
    nn::ConvNetConfig c;
    c.time_features = 3;
    return c;
  }();
  double threshold = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PolicyModel {
  PolicyConfig config;
  nn::ConvNet<float> net;
};

PolicyModel policy_init(const PolicyConfig& config);

struct Binarized {
  SelectionMatrix selection;
  Grid normalized;
  /// Set when the grid was constant; the selection is then empty.
  bool degenerate = false;
};

/// Min-max normalizes `probabilities` and selects the cells strictly above `threshold`.
Binarized binarize(const Grid& probabilities, double threshold, std::int64_t t);

struct PolicyPrediction {
  SelectionMatrix selection;
  Grid probabilities;
  Grid normalized;
  bool degenerate = false;
};

/// The window must hold `window_frames` normalized frames; its current frame is ignored by
/// construction (it is empty when the policy runs).
PolicyPrediction policy_predict(const PolicyModel& model, const StateWindow& window, const TimeFeatures& time);
std::vector<Grid> policy_probabilities(const PolicyModel& model, std::span<const StateWindow> windows,
                                       std::span<const TimeFeatures> times);

/// Mean binary cross-entropy with probabilities clipped to [1e-7, 1 - 1e-7].
double bce(const Grid& probabilities, const Grid& labels);

struct PolicyHistory {
  std::vector<double> epoch_bce;
};

/// Minimizes BCE between the sigmoid map and the agent's final selections. Uses the learning
/// rate, batch size, epochs, seed and decay of `hyper`; its mask range is unused.
PolicyHistory policy_train(PolicyModel& model, std::span<const SelectionSample> dataset, const TrainHyper& hyper);

struct PolicyEvaluation {
  StrategyRun run;
  double mean_latency_ms = 0.0;
};

/// Runs the policy online over [first, last] of a normalized test series and reconstructs
/// each collected frame with `reconstructor`.
PolicyEvaluation policy_evaluate(const PolicyModel& model, const DatasetSeries& test, const Reconstructor& reconstructor,
                                 const BucketConfig& buckets, const NormStats& norm, std::int64_t first,
                                 std::int64_t last);

struct CalibrationPoint {
  double threshold = 0.0;
  double mean_cells = 0.0;
  double mean_mae = 0.0;
};

struct Calibration {
  std::vector<CalibrationPoint> points;  // in the order of the candidate thresholds
  double threshold = 0.0;
  /// False when no candidate met epsilon; `threshold` is then the one with the lowest MAE.
  bool met = false;
};

/// Runs the policy online over [first, last] of a training series once per candidate threshold
/// (ascending) and picks the largest threshold whose mean MAE is at most `epsilon`. Then
/// `refine` bisection steps between that threshold and the next candidate.
Calibration calibrate_threshold(const PolicyModel& model, const DatasetSeries& series,
                                const Reconstructor& reconstructor, const NormStats& norm, double epsilon,
                                std::span<const double> thresholds, std::int64_t first, std::int64_t last,
                                int refine = 0);

void save_policy(const std::filesystem::path& stem, const PolicyModel& model);
PolicyModel load_policy(const std::filesystem::path& stem);

}  // namespace spider

#endif  // SPIDER_POLICY_HPP
