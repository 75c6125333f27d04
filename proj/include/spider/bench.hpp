#ifndef SPIDER_BENCH_HPP
#define SPIDER_BENCH_HPP

#include "spider/core.hpp"
#include "spider/data.hpp"
#include "spider/reconstructor.hpp"
#include "spider/report.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace spider {

/// (day_of_week, hour_of_day) slot, 0..167.
int week_slot(const TimeInfo& info);
inline constexpr int kWeekSlots = 7 * 24;

struct BudgetTable {
  int cells = 0;
  std::array<double, kWeekSlots> count{};
  std::array<bool, kWeekSlots> present{};      // slot had training data
  std::array<bool, kWeekSlots> unreachable{};  // epsilon not met even with every cell

  /// Count for the slot of `info`; slots without data fall back to the mean over present slots.
  double at(const TimeInfo& info) const;
};

/// Picks `count` cells for step t.
using CountRule = std::function<SelectionMatrix(std::int64_t t, int count, std::mt19937_64& rng)>;

struct BudgetOptions {
  int masks = 20;
  int max_iterations = 12;
  std::uint64_t seed = 0;
  /// Windows ending in history frames reuse the rule at the same count.
  int window_frames = 0;  // 0 = the reconstructor's
};

/// For each week slot with data, binary-searches the smallest count in [1, cells] whose mean
/// MAE over `masks` draws (spread over the slot's steps) is below epsilon. An infinite epsilon
/// gives 0 everywhere. Slots where every cell still misses epsilon record `cells` and a flag.
BudgetTable build_budget_table(const DatasetSeries& train, const Reconstructor& reconstructor,
                               const QualityConfig& quality, const BudgetOptions& options, const CountRule& rule);

/// Uniform random cells.
CountRule random_rule(const GridGeometry& geometry);

/// Exactly round(budget) distinct uniform cells, seeded by (seed, t).
SelectionMatrix random_baseline(const BudgetTable& budget, const TimeInfo& info, std::int64_t t,
                                const GridGeometry& geometry, std::uint64_t seed);

struct FrequencyMatrix {
  GridGeometry geometry{1, 1};
  std::vector<Grid> slots;         // kWeekSlots grids
  std::vector<int> samples;        // matrices per slot
  std::vector<int> empty_slots;    // slots that had no matrix (zero grid)

  const Grid& at(const TimeInfo& info) const { return slots[static_cast<std::size_t>(week_slot(info))]; }
};

/// Element-wise mean of the selection matrices falling in each week slot; `series` supplies
/// the calendar for each matrix's timestamp.
FrequencyMatrix build_frequency_matrix(std::span<const SelectionMatrix> selections, const DatasetSeries& series);

/// The `count` most frequent cells of a grid (ties row-major).
SelectionMatrix top_cells(const Grid& frequency, int count, std::int64_t t);
CountRule historical_rule(const FrequencyMatrix& freq, const DatasetSeries& series);
SelectionMatrix historical_baseline(const FrequencyMatrix& freq, const BudgetTable& budget, const TimeInfo& info,
                                    std::int64_t t);

struct GainPoint {
  double rate = 0.0;
  double mean_mae = 0.0;
  double median_mae = 0.0;
  double gain = 0.0;  // relative mean-MAE reduction versus the previous rate
};

struct GainOptions {
  int masks = 20;
  std::uint64_t seed = 0;
  int window_frames = 0;  // 0 = the reconstructor's
};

/// Mean and median MAE per sampling rate over seeded random windows drawn across the series.
std::vector<GainPoint> gain_curve(const DatasetSeries& series, const Reconstructor& reconstructor,
                                  std::span<const double> rates, const GainOptions& options);
/// Gains from a list of per-rate mean MAEs (first gain 0).
std::vector<GainPoint> gains_from_mae(std::span<const double> rates, std::span<const double> mean_mae);

struct ThresholdChoice {
  double epsilon = 0.0;
  double rate = 0.0;
  bool exact = true;  // false when the knee rate was absent and the nearest rate was used
};

/// Without a cutoff: mean MAE at the knee rate (or the nearest rate). With a cutoff: mean MAE
/// at the first rate >= knee whose gain is below the cutoff, else at the last rate.
ThresholdChoice choose_threshold(std::span<const GainPoint> curve, double knee_rate = 0.35,
                                 std::optional<double> cutoff = std::nullopt);

void write_gain_csv(std::ostream& out, std::span<const GainPoint> curve);

/// Figure outputs.
void write_cells_over_time_csv(std::ostream& out, const std::vector<StrategyRun>& runs);
void write_heatmap_csv(std::ostream& out, const Grid& values);
void write_heatmap_svg(std::ostream& out, const Grid& values, const std::string& title);
void write_lines_svg(std::ostream& out, const std::vector<StrategyRun>& runs, const std::string& title);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};
/// Polyline chart with shared linear axes.
void write_xy_svg(std::ostream& out, const std::vector<PlotSeries>& series, const std::string& title,
                  const std::string& x_label, const std::string& y_label);

}  // namespace spider

#endif  // SPIDER_BENCH_HPP
