#ifndef SPIDER_ENV_HPP
#define SPIDER_ENV_HPP

#include "spider/core.hpp"
#include "spider/data.hpp"
#include "spider/reconstructor.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

namespace spider {

struct EnvConfig {
  QualityConfig quality;
  /// Frames per state window; 0 means whatever the reconstructor reads.
  int window_frames = 0;
  double unavailable_fraction = 0.0;
  /// Discount factor. Only 0 is supported: every step is scored by its immediate reward.
  double gamma = 0.0;

  void validate() const;
};

struct EnvState {
  StateWindow window;        // history frames plus the partial current frame
  std::vector<int> selected;  // in selection order
  BitGrid unavailable;
  int iteration = 0;
  std::int64_t t = 0;
  TimeFeatures time{};

  const SparseMeasurement& current() const { return window.current(); }
};

struct StepResult {
  EnvState next_state;
  double reward = 0.0;
  bool done = false;
  double mae = 0.0;
  int cells_selected = 0;
  /// Set when the episode ended because no action was left, not because the threshold was met.
  bool truncated = false;
};

struct EpisodeLog {
  std::int64_t t = 0;
  std::vector<int> actions;
  std::vector<double> rewards;
  SelectionMatrix final_selection;
  double final_mae = 0.0;
  int iterations = 0;
  bool truncated = false;
};

/// Episodic cell selection over one normalized series.
///
/// Each timestamp is an episode that reveals cells one at a time until the reconstruction of
/// the current frame is within epsilon of the truth. Finished episodes can be committed so
/// later episodes see their final sparse frames as history; uncommitted history is all zeros.
class Environment {
 public:
  /// Keeps references to `series` and `reconstructor`; both must outlive the environment.
  Environment(const DatasetSeries& series, const Reconstructor& reconstructor, EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const DatasetSeries& series() const { return *series_; }
  const Reconstructor& reconstructor() const { return *reconstructor_; }
  int window_frames() const { return frames_; }
  const TrafficSnapshot& truth(std::int64_t t) const { return series_->at(t); }

  /// Throws Errc::range unless the whole window ending at t lies in the series. At least one
  /// cell is always left available.
  EnvState reset(std::int64_t t, std::uint64_t seed) const;
  std::vector<int> action_space(const EnvState& state) const;
  bool available(const EnvState& state, int cell) const;
  /// State after revealing `cell`, without reconstructing. Throws Errc::invalid_action.
  EnvState apply(const EnvState& state, int cell) const;
  StepResult step(const EnvState& state, int cell) const;
  /// `step` for a caller that already scored the resulting state.
  StepResult advance(const EnvState& state, int cell, double mae) const;
  /// Scores a reconstruction of `state` against the truth at state.t.
  double score(const EnvState& state) const;

  /// Stores the final frame of an episode as history for later resets.
  void commit(const EpisodeLog& log);
  void clear_history() { history_.clear(); }

 private:
  StepResult finish(EnvState next, double mae) const;

  const DatasetSeries* series_;
  const Reconstructor* reconstructor_;
  EnvConfig config_;
  int frames_;
  std::map<std::int64_t, SparseMeasurement> history_;
};

/// Runs one episode with `choose(state, env)` picking each action, and returns its log.
template <class Chooser>
EpisodeLog run_episode(const Environment& env, std::int64_t t, std::uint64_t seed, Chooser&& choose) {
  EnvState s = env.reset(t, seed);
  EpisodeLog log;
  log.t = t;
  for (;;) {
    const int a = choose(static_cast<const EnvState&>(s), env);
    StepResult r = env.step(s, a);
    log.actions.push_back(a);
    log.rewards.push_back(r.reward);
    log.final_mae = r.mae;
    log.truncated = r.truncated;
    s = std::move(r.next_state);
    if (r.done) break;
  }
  log.iterations = static_cast<int>(log.actions.size());
  log.final_selection = s.current().mask();
  return log;
}

nlohmann::json to_json(const EpisodeLog& log);
EpisodeLog episode_from_json(const nlohmann::json& j);
/// One JSON object per line.
void write_episodes(std::ostream& out, const std::vector<EpisodeLog>& logs);
std::vector<EpisodeLog> read_episodes(std::istream& in);

}  // namespace spider

#endif  // SPIDER_ENV_HPP
