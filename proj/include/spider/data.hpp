#ifndef SPIDER_DATA_HPP
#define SPIDER_DATA_HPP

#include "spider/core.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace spider {

/// Calendar position of a step index.
struct TimeInfo {
  int minute_of_day = 0;
  int hour = 0;
  int day_of_week = 0;    // 0 = Monday
  int week_of_month = 0;  // 0..4
  std::int64_t day = 0;   // days since 1970-01-01 (local wall clock)
  std::chrono::year_month_day date;
};

/// (hour_of_day, day_of_week, week_of_month), each scaled to [-1, 1].
using TimeFeatures = std::array<double, 3>;

TimeFeatures time_features(const TimeInfo& info);

struct DatasetSeries {
  GridGeometry geometry;
  int delta_minutes = 10;
  /// Local wall-clock minutes since 1970-01-01 00:00 at step index 0.
  std::int64_t origin_minutes = 0;
  std::vector<TrafficSnapshot> snapshots;

  bool empty() const { return snapshots.empty(); }
  int size() const { return static_cast<int>(snapshots.size()); }
  int steps_per_day() const { return 1440 / delta_minutes; }
  std::int64_t first_t() const { return snapshots.front().t(); }
  std::int64_t last_t() const { return snapshots.back().t(); }
  bool has(std::int64_t t) const { return !empty() && t >= first_t() && t <= last_t(); }
  /// Snapshot at step index t; throws Errc::range when absent.
  const TrafficSnapshot& at(std::int64_t t) const;
  TimeInfo time_info(std::int64_t t) const;

  /// Checks contiguity, shared geometry, and non-negativity.
  void validate() const;
};

struct SyntheticConfig {
  GridGeometry geometry{20, 20};
  int days = 10;
  int delta_minutes = 10;
  std::uint64_t seed = 1;
  double base_level = 20.0;
  double peak_amplitude = 400.0;
  int n_hotspots = 6;
  double noise_std = 10.0;
  double weekend_scale = 0.6;
  /// Multiplier on noise_std between 07:00 and 19:00.
  double peak_noise_factor = 1.0;
  /// Localized transient events: fixed sites, each active on a random subset of days during a
  /// site-specific window of two to four hours between 08:00 and 24:00. 0 disables them.
  int n_event_sites = 0;
  double event_amplitude = 300.0;
  double event_probability = 0.5;  // per site and day

  void validate() const;
};

struct SplitSpec {
  int train_days = 7;
  int test_days = 3;
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t buckets = 0;
  std::size_t empty_buckets = 0;     // buckets with no readings at all
  std::size_t filled_readings = 0;   // (bucket, cell) pairs zero-filled
};

/// Midnight 2013-11-04 (a Monday), the origin used by synthesized series.
std::int64_t synthetic_origin_minutes();

/// Reads `timestamp_ms,cell_id,traffic` rows (header optional, cell ids are 1-based row-major).
/// Readings are summed per (delta_minutes bucket, cell); gaps are zero-filled.
DatasetSeries load_grid_csv(const std::filesystem::path& path, const GridGeometry& geometry,
                            int delta_minutes, LoadReport* report = nullptr,
                            int utc_offset_minutes = 0);
DatasetSeries load_grid_csv(std::istream& in, const GridGeometry& geometry, int delta_minutes,
                            LoadReport* report = nullptr, int utc_offset_minutes = 0);

DatasetSeries synthesize_traffic(const SyntheticConfig& config);

/// The noiseless weekday/weekend diurnal factor used by the generator, in [0, 1].
double diurnal_shape(int minute_of_day);

struct SeriesSplit {
  DatasetSeries train;
  DatasetSeries test;
};

SeriesSplit split(const DatasetSeries& series, const SplitSpec& spec);

NormStats fit_normalizer(const DatasetSeries& train);

/// Element-wise normalize of every snapshot.
DatasetSeries normalized(const DatasetSeries& series, const NormStats& stats);

// Flat tensor container: "SPDR", u32 version = 1, u32 T, u32 X, u32 Y, then T*X*Y float32,
// all little-endian, row-major within a frame, frames in time order.
struct TensorBlock {
  std::uint32_t frames = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;
};

void write_tensor(std::ostream& out, const TensorBlock& block);
TensorBlock read_tensor(std::istream& in);
void write_tensor_file(const std::filesystem::path& path, const TensorBlock& block);
TensorBlock read_tensor_file(const std::filesystem::path& path);

/// Writes the tensor file plus a `<path>.json` sidecar with delta, origin, and first step index.
void save_series(const std::filesystem::path& path, const DatasetSeries& series);
DatasetSeries load_series(const std::filesystem::path& path);

}  // namespace spider

#endif  // SPIDER_DATA_HPP
