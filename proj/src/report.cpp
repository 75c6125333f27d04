#include "spider/report.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <ostream>

namespace spider {

void BucketConfig::validate() const {
  if (peak_start_hour < 0 || peak_start_hour > 23 || peak_end_hour < 1 || peak_end_hour > 24 ||
      peak_start_hour >= peak_end_hour)
    throw Error(Errc::config, "peak hours must satisfy 0 <= start < end <= 24");
  for (const auto& d : holidays)
    if (!d.ok()) throw Error(Errc::config, "invalid holiday date");
}

std::vector<Bucket> buckets_for(const TimeInfo& info, const BucketConfig& config) {
  std::vector<Bucket> out;
  out.push_back(info.hour >= config.peak_start_hour && info.hour < config.peak_end_hour ? peak : off_peak);
  out.push_back(info.day_of_week < 5 ? weekdays : weekend);
  if (std::find(config.holidays.begin(), config.holidays.end(), info.date) != config.holidays.end())
    out.push_back(holiday);
  out.push_back(overall);
  return out;
}

void StrategyReport::add(const std::vector<Bucket>& where, int cells, double nmae_value, double mae_value,
                         double mae_raw_value) {
  for (Bucket b : where) {
    auto& s = buckets[static_cast<std::size_t>(b)];
    ++s.n;
    s.cells += cells;
    s.nmae += nmae_value;
    s.mae += mae_value;
    s.mae_raw += mae_raw_value;
  }
}

StrategyRun run_strategy(const std::string& name, const DatasetSeries& series, const Reconstructor& reconstructor,
                         int window_frames, const Selector& select, const BucketConfig& buckets, const NormStats& norm,
                         std::int64_t first, std::int64_t last) {
  buckets.validate();
  if (window_frames < reconstructor.window_frames())
    throw Error(Errc::config, "strategy window is shorter than the reconstructor's");
  if (!series.has(first) || !series.has(last) || first > last)
    throw Error(Errc::range, "evaluation range is outside the series");
  const GridGeometry& g = series.geometry;
  StrategyRun run;
  run.report.strategy = name;
  std::map<std::int64_t, SparseMeasurement> collected;
  for (std::int64_t t = first; t <= last; ++t) {
    std::vector<SparseMeasurement> frames;
    for (std::int64_t k = t - window_frames + 1; k < t; ++k) {
      const auto it = collected.find(k);
      frames.push_back(it != collected.end() ? it->second : SparseMeasurement::empty(k, g));
    }
    frames.push_back(SparseMeasurement::empty(t, g));
    StateWindow window(std::move(frames));
    const SelectionMatrix b = select(window, t);
    if (!(b.geometry() == g) || b.t() != t) throw Error(Errc::consistency, "selector returned a mismatched matrix");
    SparseMeasurement m = apply_mask(series.at(t), b);
    window = window.with_current(m);
    const Grid est = reconstructor.reconstruct(window);
    const Grid& truth = series.at(t).values();
    const double e = mae(est, truth);
    const double n = nmae(est, truth);
    const Grid est_raw = est.unaryExpr([&](double v) { return denormalize(v, norm); });
    const Grid truth_raw = truth.unaryExpr([&](double v) { return denormalize(v, norm); });
    const double e_raw = mae(est_raw, truth_raw);
    run.report.add(buckets_for(series.time_info(t), buckets), b.count(), n, e, e_raw);
    run.t.push_back(t);
    run.cells.push_back(b.count());
    run.nmae.push_back(n);
    run.mae.push_back(e);
    run.selections.push_back(b);
    collected.insert_or_assign(t, std::move(m));
    collected.erase(t - window_frames);
  }
  return run;
}

void write_report_csv(std::ostream& out, const std::vector<StrategyReport>& reports) {
  out << "strategy,bucket,n,count,nmae,mae,mae_raw\n";
  out << std::setprecision(10);
  for (const auto& r : reports)
    for (std::size_t b = 0; b < kBucketNames.size(); ++b) {
      const auto& s = r.buckets[b];
      out << r.strategy << ',' << kBucketNames[b] << ',' << s.n;
      if (s.n > 0)
        out << ',' << s.mean_cells() << ',' << s.mean_nmae() << ',' << s.mean_mae() << ',' << s.mean_mae_raw();
      else
        out << ",,,,";
      out << '\n';
    }
}

}  // namespace spider
