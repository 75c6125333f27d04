#include "spider/env.hpp"

#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace spider {

void EnvConfig::validate() const {
  quality.validate();
  if (window_frames < 0) throw Error(Errc::config, "window_frames must be >= 0");
  if (!(unavailable_fraction >= 0.0 && unavailable_fraction < 1.0))
    throw Error(Errc::config, "unavailable_fraction must lie in [0, 1)");
  if (gamma != 0.0) throw Error(Errc::config, "only gamma = 0 is supported");
}

Environment::Environment(const DatasetSeries& series, const Reconstructor& reconstructor, EnvConfig config)
    : series_(&series), reconstructor_(&reconstructor), config_(config) {
  config_.validate();
  if (series.empty()) throw Error(Errc::empty_input, "environment over an empty series");
  frames_ = config_.window_frames > 0 ? config_.window_frames : reconstructor.window_frames();
  if (frames_ < reconstructor.window_frames())
    throw Error(Errc::config, "window of " + std::to_string(frames_) + " frames is shorter than the reconstructor's " +
                                  std::to_string(reconstructor.window_frames()));
}

EnvState Environment::reset(std::int64_t t, std::uint64_t seed) const {
  if (!series_->has(t) || !series_->has(t - frames_ + 1))
    throw Error(Errc::range, "episode at step " + std::to_string(t) + " needs steps " +
                                 std::to_string(t - frames_ + 1) + ".." + std::to_string(t) + " in the series");
  const GridGeometry& g = series_->geometry;
  std::vector<SparseMeasurement> frames;
  frames.reserve(static_cast<std::size_t>(frames_));
  for (std::int64_t k = t - frames_ + 1; k < t; ++k) {
    const auto it = history_.find(k);
    frames.push_back(it != history_.end() ? it->second : SparseMeasurement::empty(k, g));
  }
  frames.push_back(SparseMeasurement::empty(t, g));

  EnvState s;
  s.window = StateWindow(std::move(frames));
  s.t = t;
  s.time = time_features(series_->time_info(t));
  const int n_unavailable = std::min(count_for_rate(config_.unavailable_fraction, g), g.cells() - 1);
  std::mt19937_64 rng(seed);
  s.unavailable = random_selection(t, g, n_unavailable, rng).bits();
  return s;
}

bool Environment::available(const EnvState& state, int cell) const {
  if (cell < 0 || cell >= series_->geometry.cells()) return false;
  return !state.unavailable.data()[cell] && !state.current().mask().bits().data()[cell];
}

std::vector<int> Environment::action_space(const EnvState& state) const {
  std::vector<int> out;
  for (int c = 0; c < series_->geometry.cells(); ++c)
    if (available(state, c)) out.push_back(c);
  return out;
}

EnvState Environment::apply(const EnvState& state, int cell) const {
  if (!available(state, cell))
    throw Error(Errc::invalid_action, "cell " + std::to_string(cell) + " is selected, unavailable or off the grid");
  EnvState next = state;
  const double v = series_->at(state.t).values().data()[cell];
  next.window = state.window.with_current(state.current().with(cell, v));
  next.selected.push_back(cell);
  next.iteration = state.iteration + 1;
  return next;
}

double Environment::score(const EnvState& state) const {
  return mae(reconstructor_->reconstruct(state.window), series_->at(state.t).values());
}

StepResult Environment::finish(EnvState next, double mae_value) const {
  StepResult r;
  r.mae = mae_value;
  r.reward = -mae_value;
  r.cells_selected = static_cast<int>(next.selected.size());
  r.done = mae_value < config_.quality.epsilon;
  if (!r.done && action_space(next).empty()) r.done = r.truncated = true;
  r.next_state = std::move(next);
  return r;
}

StepResult Environment::step(const EnvState& state, int cell) const {
  EnvState next = apply(state, cell);
  const double m = score(next);
  return finish(std::move(next), m);
}

StepResult Environment::advance(const EnvState& state, int cell, double mae_value) const {
  return finish(apply(state, cell), mae_value);
}

void Environment::commit(const EpisodeLog& log) {
  history_.insert_or_assign(log.t, apply_mask(series_->at(log.t), log.final_selection));
}

nlohmann::json to_json(const EpisodeLog& log) {
  const auto& bits = log.final_selection.bits();
  return {{"t", log.t},
          {"actions", log.actions},
          {"rewards", log.rewards},
          {"rows", bits.rows()},
          {"cols", bits.cols()},
          {"selection", log.final_selection.cells()},
          {"final_mae", log.final_mae},
          {"iterations", log.iterations},
          {"truncated", log.truncated}};
}

EpisodeLog episode_from_json(const nlohmann::json& j) {
  EpisodeLog log;
  log.t = j.at("t").get<std::int64_t>();
  log.actions = j.at("actions").get<std::vector<int>>();
  log.rewards = j.at("rewards").get<std::vector<double>>();
  const GridGeometry g(j.at("rows").get<int>(), j.at("cols").get<int>());
  log.final_selection = SelectionMatrix::from_cells(log.t, g, j.at("selection").get<std::vector<int>>());
  log.final_mae = j.at("final_mae").get<double>();
  log.iterations = j.at("iterations").get<int>();
  log.truncated = j.at("truncated").get<bool>();
  if (static_cast<int>(log.actions.size()) != log.iterations || log.rewards.size() != log.actions.size())
    throw Error(Errc::io, "episode record at t=" + std::to_string(log.t) + " has inconsistent lengths");
  return log;
}

void write_episodes(std::ostream& out, const std::vector<EpisodeLog>& logs) {
  for (const auto& log : logs) out << to_json(log).dump() << '\n';
}

std::vector<EpisodeLog> read_episodes(std::istream& in) {
  std::vector<EpisodeLog> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::io, "episode line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace spider
