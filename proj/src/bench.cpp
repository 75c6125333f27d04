#include "spider/bench.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

namespace spider {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

int frames_for(int requested, const Reconstructor& r) {
  const int f = requested > 0 ? requested : r.window_frames();
  if (f < r.window_frames()) throw Error(Errc::config, "window is shorter than the reconstructor's");
  return f;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

}  // namespace

int week_slot(const TimeInfo& info) { return info.day_of_week * 24 + info.hour; }

double BudgetTable::at(const TimeInfo& info) const {
  const auto s = static_cast<std::size_t>(week_slot(info));
  if (present[s]) return count[s];
  double sum = 0.0;
  int n = 0;
  for (int k = 0; k < kWeekSlots; ++k)
    if (present[static_cast<std::size_t>(k)]) {
      sum += count[static_cast<std::size_t>(k)];
      ++n;
    }
  return n ? sum / n : static_cast<double>(cells);
}

CountRule random_rule(const GridGeometry& geometry) {
  return [geometry](std::int64_t t, int count, std::mt19937_64& rng) {
    return random_selection(t, geometry, count, rng);
  };
}

BudgetTable build_budget_table(const DatasetSeries& train, const Reconstructor& reconstructor,
                               const QualityConfig& quality, const BudgetOptions& options, const CountRule& rule) {
  if (train.empty()) throw Error(Errc::empty_input, "budget table over an empty series");
  if (options.masks < 1 || options.max_iterations < 1) throw Error(Errc::config, "budget search needs masks, iterations >= 1");
  if (!(quality.epsilon > 0.0)) throw Error(Errc::config, "epsilon must be positive");
  const int frames = frames_for(options.window_frames, reconstructor);
  const GridGeometry& g = train.geometry;
  const int n_cells = g.cells();
  BudgetTable table;
  table.cells = n_cells;

  std::array<std::vector<std::int64_t>, kWeekSlots> steps;
  for (std::int64_t t = train.first_t() + frames - 1; t <= train.last_t(); ++t)
    steps[static_cast<std::size_t>(week_slot(train.time_info(t)))].push_back(t);

  for (int slot = 0; slot < kWeekSlots; ++slot) {
    const auto& ts = steps[static_cast<std::size_t>(slot)];
    if (ts.empty()) continue;
    table.present[static_cast<std::size_t>(slot)] = true;
    if (std::isinf(quality.epsilon)) continue;

    const auto mean_mae = [&](int count) {
      std::vector<StateWindow> windows;
      std::vector<const Grid*> truth;
      for (int j = 0; j < options.masks; ++j) {
        const std::int64_t t = ts[static_cast<std::size_t>(j) % ts.size()];
        std::mt19937_64 rng = seeded(options.seed, static_cast<std::uint64_t>(slot), static_cast<std::uint64_t>(j));
        std::vector<SparseMeasurement> f;
        for (std::int64_t k = t - frames + 1; k <= t; ++k) f.push_back(apply_mask(train.at(k), rule(k, count, rng)));
        windows.emplace_back(std::move(f));
        truth.push_back(&train.at(t).values());
      }
      const auto est = reconstructor.reconstruct_batch(windows);
      double sum = 0.0;
      for (std::size_t j = 0; j < est.size(); ++j) sum += mae(est[j], *truth[j]);
      return sum / static_cast<double>(est.size());
    };

    double& out = table.count[static_cast<std::size_t>(slot)];
    if (!(mean_mae(n_cells) < quality.epsilon)) {
      out = n_cells;
      table.unreachable[static_cast<std::size_t>(slot)] = true;
      continue;
    }
    int lo = 1, hi = n_cells;
    if (mean_mae(lo) < quality.epsilon) {
      out = lo;
      continue;
    }
    for (int it = 0; it < options.max_iterations && hi - lo > 1; ++it) {
      const int mid = lo + (hi - lo) / 2;
      (mean_mae(mid) < quality.epsilon ? hi : lo) = mid;
    }
    out = hi;
  }
  return table;
}

SelectionMatrix random_baseline(const BudgetTable& budget, const TimeInfo& info, std::int64_t t,
                                const GridGeometry& geometry, std::uint64_t seed) {
  const int count = std::clamp(static_cast<int>(std::lround(budget.at(info))), 0, geometry.cells());
  std::mt19937_64 rng = seeded(seed, static_cast<std::uint64_t>(t), 0x7a4d);
  return random_selection(t, geometry, count, rng);
}

FrequencyMatrix build_frequency_matrix(std::span<const SelectionMatrix> selections, const DatasetSeries& series) {
  FrequencyMatrix f;
  f.geometry = series.geometry;
  f.slots.assign(kWeekSlots, Grid::Zero(series.geometry.rows, series.geometry.cols));
  f.samples.assign(kWeekSlots, 0);
  for (const auto& s : selections) {
    if (!(s.geometry() == series.geometry)) throw Error(Errc::shape, "selection geometry differs from the series");
    const auto slot = static_cast<std::size_t>(week_slot(series.time_info(s.t())));
    f.slots[slot] += s.as_grid();
    ++f.samples[slot];
  }
  for (int k = 0; k < kWeekSlots; ++k) {
    const auto slot = static_cast<std::size_t>(k);
    if (f.samples[slot] > 0)
      f.slots[slot] /= static_cast<double>(f.samples[slot]);
    else
      f.empty_slots.push_back(k);
  }
  return f;
}

SelectionMatrix top_cells(const Grid& frequency, int count, std::int64_t t) {
  const GridGeometry g(static_cast<int>(frequency.rows()), static_cast<int>(frequency.cols()));
  if (count < 0 || count > g.cells()) throw Error(Errc::range, "top-cell count outside [0, cells]");
  std::vector<int> order(static_cast<std::size_t>(g.cells()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return frequency.data()[a] > frequency.data()[b]; });
  order.resize(static_cast<std::size_t>(count));
  return SelectionMatrix::from_cells(t, g, order);
}

CountRule historical_rule(const FrequencyMatrix& freq, const DatasetSeries& series) {
  return [&freq, &series](std::int64_t t, int count, std::mt19937_64&) {
    return top_cells(freq.at(series.time_info(t)), count, t);
  };
}

SelectionMatrix historical_baseline(const FrequencyMatrix& freq, const BudgetTable& budget, const TimeInfo& info,
                                    std::int64_t t) {
  const int count = std::clamp(static_cast<int>(std::lround(budget.at(info))), 0, freq.geometry.cells());
  return top_cells(freq.at(info), count, t);
}

std::vector<GainPoint> gains_from_mae(std::span<const double> rates, std::span<const double> mean_mae) {
  if (rates.size() != mean_mae.size()) throw Error(Errc::shape, "one MAE per rate");
  std::vector<GainPoint> out;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    GainPoint p{rates[i], mean_mae[i], mean_mae[i], 0.0};
    if (i > 0) {
      if (mean_mae[i - 1] == 0.0) throw Error(Errc::undefined_denominator, "gain after a zero MAE");
      p.gain = (mean_mae[i - 1] - mean_mae[i]) / mean_mae[i - 1];
    }
    out.push_back(p);
  }
  return out;
}

std::vector<GainPoint> gain_curve(const DatasetSeries& series, const Reconstructor& reconstructor,
                                  std::span<const double> rates, const GainOptions& options) {
  if (rates.empty()) throw Error(Errc::empty_input, "no sampling rates");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] > 0.0 && rates[i] <= 1.0)) throw Error(Errc::config, "rates must lie in (0, 1]");
    if (i > 0 && !(rates[i] > rates[i - 1])) throw Error(Errc::config, "rates must be ascending");
  }
  if (options.masks < 1) throw Error(Errc::config, "gain curve needs masks >= 1");
  const int frames = frames_for(options.window_frames, reconstructor);
  const std::int64_t first = series.first_t() + frames - 1;
  if (first > series.last_t()) throw Error(Errc::range, "series is shorter than one window");
  std::uniform_int_distribution<std::int64_t> pick_t(first, series.last_t());

  std::vector<double> means;
  std::vector<GainPoint> out;
  for (std::size_t r = 0; r < rates.size(); ++r) {
    const int count = std::max(1, count_for_rate(rates[r], series.geometry));
    std::vector<StateWindow> windows;
    std::vector<const Grid*> truth;
    for (int j = 0; j < options.masks; ++j) {
      std::mt19937_64 rng = seeded(options.seed, static_cast<std::uint64_t>(j), 0x6a1);
      const std::int64_t t = pick_t(rng);
      std::vector<SparseMeasurement> f;
      for (std::int64_t k = t - frames + 1; k <= t; ++k)
        f.push_back(apply_mask(series.at(k), random_selection(k, series.geometry, count, rng)));
      windows.emplace_back(std::move(f));
      truth.push_back(&series.at(t).values());
    }
    const auto est = reconstructor.reconstruct_batch(windows);
    std::vector<double> e;
    for (std::size_t j = 0; j < est.size(); ++j) e.push_back(mae(est[j], *truth[j]));
    means.push_back(std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size()));
    out.push_back({rates[r], means.back(), median(e), 0.0});
  }
  const auto gains = gains_from_mae(rates, means);
  for (std::size_t r = 0; r < out.size(); ++r) out[r].gain = gains[r].gain;
  return out;
}

ThresholdChoice choose_threshold(std::span<const GainPoint> curve, double knee_rate, std::optional<double> cutoff) {
  if (curve.empty()) throw Error(Errc::empty_input, "empty gain curve");
  if (cutoff) {
    for (const auto& p : curve)
      if (p.rate >= knee_rate && p.gain < *cutoff) return {p.mean_mae, p.rate, true};
    return {curve.back().mean_mae, curve.back().rate, true};
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (std::abs(curve[i].rate - knee_rate) < std::abs(curve[best].rate - knee_rate)) best = i;
  const bool exact = std::abs(curve[best].rate - knee_rate) < 1e-12;
  return {curve[best].mean_mae, curve[best].rate, exact};
}

void write_gain_csv(std::ostream& out, std::span<const GainPoint> curve) {
  out << "rate,mean_mae,median_mae,gain\n" << std::setprecision(10);
  for (const auto& p : curve) out << p.rate << ',' << p.mean_mae << ',' << p.median_mae << ',' << p.gain << '\n';
}

void write_cells_over_time_csv(std::ostream& out, const std::vector<StrategyRun>& runs) {
  out << "t";
  for (const auto& r : runs) out << ',' << r.report.strategy;
  out << '\n';
  if (runs.empty()) return;
  for (std::size_t i = 0; i < runs.front().t.size(); ++i) {
    out << runs.front().t[i];
    for (const auto& r : runs) {
      if (r.t.size() != runs.front().t.size() || r.t[i] != runs.front().t[i])
        throw Error(Errc::consistency, "strategy runs cover different steps");
      out << ',' << r.cells[i];
    }
    out << '\n';
  }
}

void write_heatmap_csv(std::ostream& out, const Grid& values) {
  out << std::setprecision(10);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << values(r, c);
    out << '\n';
  }
}

void write_heatmap_svg(std::ostream& out, const Grid& values, const std::string& title) {
  constexpr int px = 16, top = 24;
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << values.cols() * px << "\" height=\""
      << values.rows() * px + top << "\">\n";
  out << "<text x=\"2\" y=\"16\" font-size=\"12\" font-family=\"sans-serif\">" << title << "</text>\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - (values(r, c) - lo) / span)));
      out << "<rect x=\"" << c * px << "\" y=\"" << r * px + top << "\" width=\"" << px << "\" height=\"" << px
          << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\"/>\n";
    }
  out << "</svg>\n";
}

void write_lines_svg(std::ostream& out, const std::vector<StrategyRun>& runs, const std::string& title) {
  std::vector<PlotSeries> series;
  for (const auto& r : runs) {
    PlotSeries p{r.report.strategy, {}, {}};
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      p.x.push_back(static_cast<double>(i));
      p.y.push_back(r.cells[i]);
    }
    series.push_back(std::move(p));
  }
  write_xy_svg(out, series, title, "step", "cells");
}

void write_xy_svg(std::ostream& out, const std::vector<PlotSeries>& series, const std::string& title,
                  const std::string& x_label, const std::string& y_label) {
  constexpr int w = 720, h = 360, pad = 50;
  static constexpr const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const auto px = [&](double x) { return pad + (x - x0) / (x1 - x0) * (w - 2 * pad); };
  const auto py = [&](double y) { return h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad); };
  out << std::defaultfloat << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\">\n";
  out << "<text x=\"" << pad << "\" y=\"20\" font-size=\"13\">" << title << "</text>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" font-size=\"11\">" << x_label << "</text>\n";
  out << "<text x=\"6\" y=\"" << pad - 8 << "\" font-size=\"11\">" << y_label << "</text>\n";
  out << "<text x=\"" << pad - 4 << "\" y=\"" << h - pad + 14 << "\" font-size=\"10\">" << x0 << "</text>\n";
  out << "<text x=\"" << w - pad - 10 << "\" y=\"" << h - pad + 14 << "\" font-size=\"10\">" << x1 << "</text>\n";
  out << "<text x=\"4\" y=\"" << pad + 4 << "\" font-size=\"10\">" << y1 << "</text>\n";
  out << "<text x=\"4\" y=\"" << h - pad << "\" font-size=\"10\">" << y0 << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % 5];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i)
      out << std::fixed << std::setprecision(1) << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    out << std::defaultfloat << std::setprecision(6) << "\"/>\n";
    out << "<text x=\"" << w - pad - 120 << "\" y=\"" << pad + 14 * static_cast<int>(k) << "\" font-size=\"11\" fill=\""
        << color << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace spider
