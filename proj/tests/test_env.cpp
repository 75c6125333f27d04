#include <doctest.h>

#include "spider/classic.hpp"
#include "spider/env.hpp"

#include <random>
#include <sstream>

using namespace spider;

namespace {

DatasetSeries series_of(std::vector<Grid> frames) {
  DatasetSeries s;
  s.geometry = GridGeometry(static_cast<int>(frames.front().rows()), static_cast<int>(frames.front().cols()));
  for (std::size_t t = 0; t < frames.size(); ++t) s.snapshots.emplace_back(static_cast<std::int64_t>(t), frames[t]);
  return s;
}

DatasetSeries desk_series(int days = 1) {
  SyntheticConfig sc;
  sc.days = days;
  const auto raw = synthesize_traffic(sc);
  return normalized(raw, fit_normalizer(raw));
}

Errc thrown_code(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::io;
}

EnvConfig config(double eps, double unavailable = 0.0) {
  EnvConfig c;
  c.quality.epsilon = eps;
  c.unavailable_fraction = unavailable;
  return c;
}

}  // namespace

TEST_CASE("cold start gives an empty window of the reconstructor's length") {
  const auto s = desk_series();
  FunctionReconstructor three(3, [](const StateWindow& w) { return w.current().values(); });
  const Environment env(s, three, config(0.1));
  const EnvState st = env.reset(10, 1);
  CHECK(st.window.size() == 3);
  CHECK(st.window.t() == 10);
  for (const auto& f : st.window.frames()) {
    CHECK(f.mask().count() == 0);
    CHECK(f.values().isZero());
  }
  CHECK(st.iteration == 0);
  CHECK(st.selected.empty());
  CHECK(env.action_space(st).size() == 400);
  CHECK(st.time == time_features(s.time_info(10)));
}

TEST_CASE("unavailable cells shrink the action space") {
  const auto s = desk_series();
  KnnReconstructor knn;
  const Environment env(s, knn, config(0.1, 0.1));
  const EnvState a = env.reset(5, 9), b = env.reset(5, 9), c = env.reset(5, 10);
  CHECK(env.action_space(a).size() == 360);
  CHECK(a.unavailable == b.unavailable);
  CHECK_FALSE(a.unavailable == c.unavailable);
  int blocked = -1;
  for (int k = 0; k < 400 && blocked < 0; ++k)
    if (a.unavailable.data()[k]) blocked = k;
  CHECK(thrown_code([&] { env.step(a, blocked); }) == Errc::invalid_action);
}

TEST_CASE("reset checks the episode range") {
  const auto s = desk_series();
  FunctionReconstructor seven(7, [](const StateWindow& w) { return w.current().values(); });
  const Environment env(s, seven, config(0.1));
  CHECK(thrown_code([&] { env.reset(5, 1); }) == Errc::range);
  CHECK_NOTHROW(env.reset(6, 1));
  CHECK(thrown_code([&] { env.reset(s.last_t() + 1, 1); }) == Errc::range);
}

TEST_CASE("config validation") {
  EnvConfig c = config(0.1);
  c.gamma = 0.9;
  CHECK_THROWS_AS(c.validate(), Error);
  c = config(0.0);
  CHECK_THROWS_AS(c.validate(), Error);
  c = config(0.1, 1.0);
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("action space shrinks with each selection and empties at exhaustion") {
  const auto s = desk_series();
  KnnReconstructor knn;
  EnvConfig cfg = config(1e-12);
  const Environment env(s, knn, cfg);
  EnvState st = env.reset(3, 1);
  st = env.step(st, 7).next_state;
  const auto space = env.action_space(st);
  CHECK(space.size() == 399);
  CHECK(std::find(space.begin(), space.end(), 7) == space.end());
  CHECK(thrown_code([&] { env.step(st, 7); }) == Errc::invalid_action);
  CHECK(thrown_code([&] { env.step(st, 400); }) == Errc::invalid_action);
  CHECK(thrown_code([&] { env.step(st, -1); }) == Errc::invalid_action);
}

TEST_CASE("perfect reconstruction finishes in one step with zero reward") {
  const auto s = desk_series();
  FunctionReconstructor oracle(1, [&](const StateWindow& w) { return s.at(w.t()).values(); });
  const Environment env(s, oracle, config(0.01));
  const StepResult r = env.step(env.reset(4, 1), 123);
  CHECK(r.reward == 0.0);
  CHECK(r.done);
  CHECK_FALSE(r.truncated);
  CHECK(r.cells_selected == 1);
  CHECK(r.next_state.iteration == 1);
  CHECK(r.next_state.selected == std::vector<int>{123});
}

TEST_CASE("reward is the negative MAE of a hand-computed reconstruction") {
  Grid truth(4, 4);
  truth << 1, 2, 3, 4,  //
      2, 3, 4, 5,       //
      3, 4, 5, 6,       //
      4, 5, 6, 9;
  const auto s = series_of({truth});
  KnnReconstructor knn(2);
  const Environment env(s, knn, config(0.01));
  EnvState st = env.reset(0, 1);
  const StepResult r1 = env.step(st, 0);
  // A single sample fills the grid with its value.
  CHECK(r1.reward == doctest::Approx(-(truth.array() - 1.0).abs().mean()));
  CHECK(r1.next_state.current().values()(0, 0) == 1.0);
  const StepResult r2 = env.step(r1.next_state, 15);
  // Cell (0,1): neighbours (0,0) at 1 and (3,3) at sqrt(13); inverse-distance mean.
  Grid expected = Grid::Zero(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const double d0 = std::hypot(r, c), d1 = std::hypot(3 - r, 3 - c);
      if (d0 == 0.0) expected(r, c) = 1.0;
      else if (d1 == 0.0) expected(r, c) = 9.0;
      else expected(r, c) = (1.0 / d0 + 9.0 / d1) / (1.0 / d0 + 1.0 / d1);
    }
  CHECK(r2.reward == doctest::Approx(-(expected - truth).cwiseAbs().mean()));
  CHECK(r2.mae == doctest::Approx(-r2.reward));
}

TEST_CASE("episodes end below epsilon, stay bounded, and rewards stay in range") {
  const auto s = desk_series();
  KnnReconstructor knn;
  std::mt19937_64 rng(17);
  const double max_value = [&] {
    double m = 0.0;
    for (const auto& f : s.snapshots) m = std::max(m, f.values().maxCoeff());
    return m;
  }();
  for (double eps : {0.2, 0.08}) {
    const Environment env(s, knn, config(eps, 0.1));
    for (int trial = 0; trial < 5; ++trial) {
      const std::int64_t t = 20 + trial * 17;
      const EpisodeLog log = run_episode(env, t, trial, [&](const EnvState& st, const Environment& e) {
        const auto space = e.action_space(st);
        return space[std::uniform_int_distribution<std::size_t>(0, space.size() - 1)(rng)];
      });
      CHECK(log.iterations == static_cast<int>(log.actions.size()));
      CHECK(log.final_selection.count() == log.iterations);
      CHECK(log.iterations <= 360);
      if (!log.truncated) CHECK(log.final_mae < eps);
      for (double r : log.rewards) {
        CHECK(r <= 0.0);
        CHECK(r >= -max_value);
      }
    }
  }
}

TEST_CASE("an unreachable threshold truncates at exhaustion") {
  const Grid truth = Grid::Constant(2, 3, 2.0);
  const auto s = series_of({truth});
  FunctionReconstructor biased(1, [](const StateWindow& w) { return Grid(w.current().values().array() + 1.0); });
  EnvConfig cfg = config(0.5, 0.2);
  const Environment env(s, biased, cfg);
  const EpisodeLog log = run_episode(env, 0, 3, [](const EnvState& st, const Environment& e) {
    return e.action_space(st).front();
  });
  CHECK(log.truncated);
  CHECK(log.iterations == 5);
  // Revealed cells read 3 and hidden ones 1 against a truth of 2.
  CHECK(log.final_mae == doctest::Approx(1.0));
}

TEST_CASE("committed episodes become history") {
  const auto s = desk_series();
  FunctionReconstructor three(3, [](const StateWindow& w) { return w.current().values(); });
  Environment env(s, three, config(0.1));
  EpisodeLog log;
  log.t = 9;
  log.final_selection = SelectionMatrix::from_cells(9, s.geometry, std::vector<int>{4, 50});
  env.commit(log);
  const EnvState st = env.reset(10, 1);
  const auto& prev = st.window.frames()[1];
  CHECK(prev.t() == 9);
  CHECK(prev.mask().cells() == std::vector<int>{4, 50});
  CHECK(prev.values().data()[50] == s.at(9).values().data()[50]);
  CHECK(st.window.frames()[0].mask().count() == 0);
  env.clear_history();
  CHECK(env.reset(10, 1).window.frames()[1].mask().count() == 0);
}

TEST_CASE("episode logs roundtrip through line-delimited records") {
  const auto s = desk_series();
  KnnReconstructor knn;
  const Environment env(s, knn, config(0.15));
  std::vector<EpisodeLog> logs;
  for (std::int64_t t : {30, 31, 32})
    logs.push_back(run_episode(env, t, 1, [](const EnvState& st, const Environment& e) {
      return e.action_space(st)[static_cast<std::size_t>(st.iteration * 37) % e.action_space(st).size()];
    }));
  std::stringstream io;
  write_episodes(io, logs);
  const auto back = read_episodes(io);
  REQUIRE(back.size() == logs.size());
  for (std::size_t k = 0; k < logs.size(); ++k) {
    CHECK(back[k].t == logs[k].t);
    CHECK(back[k].actions == logs[k].actions);
    CHECK(back[k].rewards == logs[k].rewards);
    CHECK(back[k].final_selection.bits() == logs[k].final_selection.bits());
    CHECK(back[k].final_selection.t() == logs[k].t);
    CHECK(back[k].final_mae == logs[k].final_mae);
    CHECK(back[k].iterations == logs[k].iterations);
    CHECK(back[k].truncated == logs[k].truncated);
  }
  std::stringstream bad("{\"t\": 1}\n");
  CHECK_THROWS_AS(read_episodes(bad), Error);
}
