#include <doctest.h>

#include "spider/bench.hpp"
#include "spider/classic.hpp"

#include <cmath>
#include <limits>
#include <sstream>

using namespace spider;

namespace {

DatasetSeries hourly(int days, GridGeometry g = {8, 8}, double peak_noise = 1.0, std::uint64_t seed = 1) {
  SyntheticConfig sc;
  sc.geometry = g;
  sc.days = days;
  sc.delta_minutes = 60;
  sc.noise_std = 3.0;
  sc.peak_noise_factor = peak_noise;
  sc.seed = seed;
  const DatasetSeries raw = synthesize_traffic(sc);
  return normalized(raw, fit_normalizer(raw));
}

FunctionReconstructor oracle_of(const DatasetSeries& s) {
  return FunctionReconstructor(1, [&s](const StateWindow& w) { return Grid(s.at(w.current().t()).values()); }, "oracle");
}

QualityConfig quality(double eps) {
  QualityConfig q;
  q.epsilon = eps;
  return q;
}

TimeInfo at_slot(int dow, int hour) {
  TimeInfo info;
  info.day_of_week = dow;
  info.hour = hour;
  return info;
}

}  // namespace

TEST_CASE("week slots cover 0..167") {
  CHECK(week_slot(at_slot(0, 0)) == 0);
  CHECK(week_slot(at_slot(6, 23)) == 167);
  CHECK(week_slot(at_slot(2, 5)) == 53);
}

TEST_CASE("budget table edge cases") {
  const auto s = hourly(2);
  const auto oracle = oracle_of(s);
  BudgetOptions opt;
  opt.masks = 5;
  const auto exact = build_budget_table(s, oracle, quality(1e-3), opt, random_rule(s.geometry));
  int present = 0;
  for (int k = 0; k < kWeekSlots; ++k) {
    if (!exact.present[static_cast<std::size_t>(k)]) continue;
    ++present;
    CHECK(exact.count[static_cast<std::size_t>(k)] == 1.0);
  }
  CHECK(present == 48);
  CHECK(exact.at(at_slot(6, 3)) == 1.0);  // slot without data falls back to the mean

  const auto free = build_budget_table(s, oracle, quality(std::numeric_limits<double>::infinity()), opt,
                                       random_rule(s.geometry));
  for (double c : free.count) CHECK(c == 0.0);

  const FunctionReconstructor off(1, [](const StateWindow& w) { return Grid(w.current().values().array() + 5.0); });
  const auto never = build_budget_table(s, off, quality(0.1), opt, random_rule(s.geometry));
  const int slot = week_slot(s.time_info(s.first_t()));
  CHECK(never.unreachable[static_cast<std::size_t>(slot)]);
  CHECK(never.count[static_cast<std::size_t>(slot)] == 64.0);
  CHECK_THROWS_AS(build_budget_table(DatasetSeries{}, oracle, quality(1.0), opt, random_rule(s.geometry)), Error);
}

TEST_CASE("budget search is monotone in epsilon and deterministic") {
  const auto s = hourly(1);
  const KnnReconstructor knn;
  BudgetOptions opt;
  opt.seed = 4;
  const auto loose = build_budget_table(s, knn, quality(0.08), opt, random_rule(s.geometry));
  const auto tight = build_budget_table(s, knn, quality(0.04), opt, random_rule(s.geometry));
  const auto again = build_budget_table(s, knn, quality(0.04), opt, random_rule(s.geometry));
  for (int k = 0; k < kWeekSlots; ++k) {
    const auto i = static_cast<std::size_t>(k);
    CHECK(tight.count[i] >= loose.count[i]);
    CHECK(tight.count[i] == again.count[i]);
    CHECK(tight.count[i] >= 0.0);
    CHECK(tight.count[i] <= 64.0);
  }
}

TEST_CASE("noisier peak hours need a larger budget") {
  const auto s = hourly(2, {8, 8}, 4.0);
  const KnnReconstructor knn;
  const auto table = build_budget_table(s, knn, quality(0.06), BudgetOptions{}, random_rule(s.geometry));
  double peak = 0.0, off = 0.0;
  int np = 0, no = 0;
  for (int k = 0; k < kWeekSlots; ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (!table.present[i]) continue;
    const int hour = k % 24;
    (hour >= 7 && hour < 19 ? peak : off) += table.count[i];
    ++(hour >= 7 && hour < 19 ? np : no);
  }
  CHECK(peak / np >= off / no);
}

TEST_CASE("random baseline emits its budget exactly") {
  const GridGeometry g{6, 6};
  BudgetTable b;
  b.cells = 36;
  b.present.fill(true);
  b.count.fill(5.0);
  b.count[static_cast<std::size_t>(week_slot(at_slot(1, 1)))] = 0.0;
  b.count[static_cast<std::size_t>(week_slot(at_slot(1, 2)))] = 36.0;
  b.count[static_cast<std::size_t>(week_slot(at_slot(1, 3)))] = 4.6;
  for (std::int64_t t = 0; t < 50; ++t) CHECK(random_baseline(b, at_slot(0, 9), t, g, 3).count() == 5);
  CHECK(random_baseline(b, at_slot(0, 9), 7, g, 3).bits() == random_baseline(b, at_slot(0, 9), 7, g, 3).bits());
  CHECK(random_baseline(b, at_slot(0, 9), 7, g, 3).bits() != random_baseline(b, at_slot(0, 9), 7, g, 4).bits());
  CHECK(random_baseline(b, at_slot(1, 1), 7, g, 3).count() == 0);
  CHECK(random_baseline(b, at_slot(1, 2), 7, g, 3).count() == 36);
  CHECK(random_baseline(b, at_slot(1, 3), 7, g, 3).count() == 5);
}

TEST_CASE("frequency matrix examples") {
  const auto s = hourly(8, {2, 2});
  const std::int64_t t0 = s.first_t();
  const std::int64_t week = 7 * 24;
  const std::vector<int> a{0, 3}, b{1, 2};
  std::vector<SelectionMatrix> one{SelectionMatrix::from_cells(t0, s.geometry, a)};
  const auto f1 = build_frequency_matrix(one, s);
  const auto slot0 = static_cast<std::size_t>(week_slot(s.time_info(t0)));
  CHECK(f1.slots[slot0] == one[0].as_grid());
  CHECK(f1.samples[slot0] == 1);
  CHECK(f1.empty_slots.size() == kWeekSlots - 1);

  std::vector<SelectionMatrix> two{SelectionMatrix::from_cells(t0, s.geometry, a),
                                   SelectionMatrix::from_cells(t0 + week, s.geometry, b)};
  const auto f2 = build_frequency_matrix(two, s);
  CHECK((f2.slots[slot0].array() == 0.5).all());

  std::mt19937_64 rng(1);
  std::vector<SelectionMatrix> many;
  for (std::int64_t t = t0; t <= s.last_t(); ++t) many.push_back(random_selection(t, s.geometry, 2, rng));
  for (const Grid& g : build_frequency_matrix(many, s).slots) {
    CHECK(g.minCoeff() >= 0.0);
    CHECK(g.maxCoeff() <= 1.0);
  }
}

TEST_CASE("historical baseline takes the top cells with row-major ties") {
  FrequencyMatrix f;
  f.geometry = GridGeometry{3, 3};
  f.slots.assign(kWeekSlots, Grid::Constant(3, 3, 0.25));
  f.samples.assign(kWeekSlots, 1);
  BudgetTable b;
  b.cells = 9;
  b.present.fill(true);
  b.count.fill(3.0);
  CHECK(historical_baseline(f, b, at_slot(0, 0), 0).cells() == std::vector<int>{0, 1, 2});
  f.slots[0](2, 1) = 0.9;
  b.count[0] = 1.0;
  CHECK(historical_baseline(f, b, at_slot(0, 0), 0).cells() == std::vector<int>{7});
  b.count[0] = 9.0;
  CHECK(historical_baseline(f, b, at_slot(0, 0), 0).count() == 9);
  b.count[0] = 4.0;
  CHECK(historical_baseline(f, b, at_slot(0, 0), 0).cells() == std::vector<int>{0, 1, 2, 7});
  CHECK_THROWS_AS(top_cells(f.slots[0], 10, 0), Error);
}

TEST_CASE("gain arithmetic") {
  const std::vector<double> rates{0.10, 0.15};
  const std::vector<double> maes{1.0, 0.82};
  const auto g = gains_from_mae(rates, maes);
  CHECK(g[0].gain == 0.0);
  CHECK(g[1].rate == 0.15);
  CHECK(g[1].gain == doctest::Approx(0.18).epsilon(1e-12));

  const auto s = hourly(1);
  const FunctionReconstructor flat(
      1, [&s](const StateWindow& w) { return Grid(s.at(w.current().t()).values().array() + 0.3); });
  const std::vector<double> sweep{0.1, 0.2, 0.3, 0.5};
  for (const auto& p : gain_curve(s, flat, sweep, GainOptions{})) {
    CHECK(p.gain == 0.0);
    CHECK(p.mean_mae == doctest::Approx(0.3));
  }
  const std::vector<double> unsorted{0.2, 0.1};
  CHECK_THROWS_AS(gain_curve(s, flat, unsorted, GainOptions{}), Error);
}

TEST_CASE("knn gain curve flattens past the knee") {
  const auto s = hourly(3, {16, 16});
  const KnnReconstructor knn;
  const std::vector<double> rates{0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
  GainOptions opt;
  opt.masks = 40;
  opt.seed = 2;
  const auto curve = gain_curve(s, knn, rates, opt);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].median_mae <= curve[i - 1].median_mae);
  double pre = 0.0;
  int n_pre = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (curve[i].rate <= 0.35) {
      pre += curve[i].gain;
      ++n_pre;
    }
  pre /= n_pre;
  for (const auto& p : curve)
    if (p.rate > 0.35) CHECK(p.gain < pre);
  const auto again = gain_curve(s, knn, rates, opt);
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(curve[i].mean_mae == again[i].mean_mae);
}

TEST_CASE("threshold choice") {
  const std::vector<GainPoint> curve{{0.25, 0.5, 0.5, 0.0}, {0.35, 0.4, 0.4, 0.2}, {0.45, 0.38, 0.38, 0.05},
                                     {0.55, 0.37, 0.37, 0.026}};
  const auto knee = choose_threshold(curve);
  CHECK(knee.epsilon == 0.4);
  CHECK(knee.exact);
  const auto last = choose_threshold(curve, 0.35, 0.0);
  CHECK(last.rate == 0.55);
  CHECK(last.epsilon == 0.37);
  CHECK(choose_threshold(curve, 0.35, 0.1).rate == 0.45);
  const auto near = choose_threshold(curve, 0.33);
  CHECK(near.rate == 0.35);
  CHECK_FALSE(near.exact);
  CHECK_THROWS_AS(choose_threshold(std::vector<GainPoint>{}), Error);
}

TEST_CASE("figure writers") {
  StrategyRun a, b;
  a.report.strategy = "random";
  b.report.strategy = "policy";
  a.t = b.t = {10, 11};
  a.cells = {5, 6};
  b.cells = {3, 2};
  std::ostringstream csv;
  write_cells_over_time_csv(csv, {a, b});
  CHECK(csv.str() == "t,random,policy\n10,5,3\n11,6,2\n");
  std::ostringstream heat;
  Grid g(2, 2);
  g << 0, 0.5, 0.25, 1;
  write_heatmap_csv(heat, g);
  CHECK(heat.str() == "0,0.5\n0.25,1\n");
  std::ostringstream svg;
  write_lines_svg(svg, {a, b}, "cells");
  CHECK(svg.str().find("<polyline") != std::string::npos);
  std::ostringstream hsvg;
  write_heatmap_svg(hsvg, g, "freq");
  CHECK(hsvg.str().find("rgb(255,255,255)") != std::string::npos);
  b.t = {10, 12};
  std::ostringstream bad;
  CHECK_THROWS_AS(write_cells_over_time_csv(bad, {a, b}), Error);
}
