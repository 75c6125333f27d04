#ifndef SPIDER_AGENT_HPP
#define SPIDER_AGENT_HPP

#include "spider/env.hpp"
#include "spider/networks.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

namespace spider {

struct AgentConfig {
  int k = 16;
  nn::AgentNetConfig net;  // net.prev_actions_len is the action history length
  std::uint64_t seed = 1;
  int epochs = 1;
  double learning_rate = 1e-3;
  /// Multiplies the completed-episode count in the exploration schedule.
  double eta_scale = 1.0;

  void validate(const GridGeometry& geometry) const;
};

/// Continuous grid coordinate; cell (i, j) has its center at (i + 0.5, j + 0.5).
struct PseudoAction {
  double row = 0.0;
  double col = 0.0;
};

struct CandidateSet {
  std::vector<int> cells;  // nearest first, then the random picks
  int n_random = 0;
};

struct AgentModel {
  AgentConfig config;
  GridGeometry geometry{1, 1};
  nn::AgentNet<float> net;
};

AgentModel agent_init(const AgentConfig& config, const GridGeometry& geometry);

/// Random share of a k-candidate subset after x completed episodes:
/// round-half-even of k (0.1 + 0.9 e^-x).
int eta(int k, double x);

/// Fixed-length action history, oldest first, left-padded with -1.
std::vector<int> recent_actions(std::span<const int> selected, int length);

PseudoAction pseudo_action(const AgentModel& model, const SparseMeasurement& frame, const TimeFeatures& time,
                           std::span<const int> prev_actions);

/// Squared distance from `a_hat` to the center of `cell`, with both axes scaled to [-1, 1]:
/// the per-step regression loss of agent training.
double pseudo_action_loss(const PseudoAction& a_hat, int cell, const GridGeometry& geometry);

/// (k - n_random) available cells nearest to `a_hat` (ties row-major) plus `n_random` distinct
/// uniform picks from the remaining available cells. Returns every available cell when fewer
/// than k are left.
CandidateSet candidate_subset(const PseudoAction& a_hat, std::span<const int> available, const GridGeometry& geometry,
                              int k, int n_random, std::mt19937_64& rng);

struct Scored {
  int cell = -1;
  std::vector<double> mae;  // per candidate, in candidate order
};

/// Scores every candidate against the truth and returns the lowest-error one (ties to the
/// lowest cell index). Throws Errc::empty_input on an empty set.
Scored select_action(const CandidateSet& candidates, const EnvState& state, const Environment& env);

struct AgentTraining {
  std::vector<EpisodeLog> logs;  // final epoch, in episode order
  std::vector<double> epoch_loss;  // mean squared coordinate error per step
  long episodes = 0;
};

/// Trains the pseudo-action network on episodes at `timestamps` (run in order each epoch).
/// Finished episodes are committed to `env` as history. The reconstructor is only read.
AgentTraining train_agent(AgentModel& model, Environment& env, std::span<const std::int64_t> timestamps);

/// One greedy episode of a trained agent with the exploration share at its floor.
EpisodeLog run_agent_episode(const AgentModel& model, const Environment& env, std::int64_t t, std::uint64_t seed);

struct SelectionSample {
  StateWindow window;  // history frames and an empty current frame
  SelectionMatrix label;
  TimeFeatures time{};
};

/// One sample per log. History frames are rebuilt from the other logs' final selections,
/// zero where no log covers a step.
std::vector<SelectionSample> export_selection_dataset(std::span<const EpisodeLog> logs, const DatasetSeries& series,
                                                      int window_frames);

/// One JSON record per line; frame values are base64-coded little-endian float32.
void write_selection_dataset(std::ostream& out, std::span<const SelectionSample> samples);
std::vector<SelectionSample> read_selection_dataset(std::istream& in);

void save_agent(const std::filesystem::path& stem, const AgentModel& model);
AgentModel load_agent(const std::filesystem::path& stem);

}  // namespace spider

#endif  // SPIDER_AGENT_HPP
