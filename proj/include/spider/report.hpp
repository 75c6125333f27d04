#ifndef SPIDER_REPORT_HPP
#define SPIDER_REPORT_HPP

#include "spider/core.hpp"
#include "spider/data.hpp"
#include "spider/reconstructor.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace spider {

inline constexpr std::array<const char*, 6> kBucketNames = {"peak", "off-peak", "weekdays", "weekend", "holiday", "overall"};
enum Bucket { peak, off_peak, weekdays, weekend, holiday, overall };

struct BucketConfig {
  int peak_start_hour = 7;  // inclusive
  int peak_end_hour = 19;   // exclusive
  std::vector<std::chrono::year_month_day> holidays;

  void validate() const;
};

/// Buckets containing a timestamp. Peak/off-peak and weekdays/weekend each split every
/// timestamp; holiday is an extra overlay; overall holds everything.
std::vector<Bucket> buckets_for(const TimeInfo& info, const BucketConfig& config);

struct BucketStats {
  long n = 0;
  double cells = 0.0;
  double nmae = 0.0;
  double mae = 0.0;
  double mae_raw = 0.0;

  double mean_cells() const { return n ? cells / static_cast<double>(n) : 0.0; }
  double mean_nmae() const { return n ? nmae / static_cast<double>(n) : 0.0; }
  double mean_mae() const { return n ? mae / static_cast<double>(n) : 0.0; }
  double mean_mae_raw() const { return n ? mae_raw / static_cast<double>(n) : 0.0; }
};

struct StrategyReport {
  std::string strategy;
  std::array<BucketStats, 6> buckets{};

  void add(const std::vector<Bucket>& where, int cells, double nmae, double mae, double mae_raw);
};

/// Per-timestamp record of one strategy over a test range.
struct StrategyRun {
  StrategyReport report;
  std::vector<std::int64_t> t;
  std::vector<int> cells;
  std::vector<double> nmae, mae;
  std::vector<SelectionMatrix> selections;
};

/// Chooses B_t from the window of earlier collected frames (the current frame is empty).
using Selector = std::function<SelectionMatrix(const StateWindow& window, std::int64_t t)>;

/// Online evaluation over steps [first, last] of a normalized series. Each step selects,
/// collects M_t, reconstructs from the collected frames and scores against the truth; the
/// collected frame then becomes history. Steps before `first` start as zero frames.
StrategyRun run_strategy(const std::string& name, const DatasetSeries& series, const Reconstructor& reconstructor,
                         int window_frames, const Selector& select, const BucketConfig& buckets, const NormStats& norm,
                         std::int64_t first, std::int64_t last);

/// Table rows: strategy,bucket,n,count,nmae,mae,mae_raw. Empty buckets leave the metrics blank.
void write_report_csv(std::ostream& out, const std::vector<StrategyReport>& reports);

}  // namespace spider

#endif  // SPIDER_REPORT_HPP
