#include "spider/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace spider {

using namespace std::chrono;

TimeFeatures time_features(const TimeInfo& info) {
  return {info.hour / 23.0 * 2.0 - 1.0, info.day_of_week / 6.0 * 2.0 - 1.0,
          info.week_of_month / 4.0 * 2.0 - 1.0};
}

const TrafficSnapshot& DatasetSeries::at(std::int64_t t) const {
  if (!has(t)) throw Error(Errc::range, "step index " + std::to_string(t) + " outside series");
  return snapshots[static_cast<std::size_t>(t - first_t())];
}

TimeInfo DatasetSeries::time_info(std::int64_t t) const {
  const std::int64_t wall = origin_minutes + t * delta_minutes;
  const std::int64_t day = wall >= 0 ? wall / 1440 : -((-wall + 1439) / 1440);
  TimeInfo info;
  info.minute_of_day = static_cast<int>(wall - day * 1440);
  info.hour = info.minute_of_day / 60;
  info.day = day;
  const sys_days sd{days{day}};
  info.date = year_month_day{sd};
  info.day_of_week = static_cast<int>(weekday{sd}.iso_encoding()) - 1;
  info.week_of_month = std::min(4, static_cast<int>((unsigned(info.date.day()) - 1) / 7));
  return info;
}

void DatasetSeries::validate() const {
  if (delta_minutes < 1 || 1440 % delta_minutes != 0)
    throw Error(Errc::config, "delta_minutes must divide a day");
  for (std::size_t k = 0; k < snapshots.size(); ++k) {
    if (!(snapshots[k].geometry() == geometry)) throw Error(Errc::shape, "snapshot geometry mismatch");
    if (k > 0 && snapshots[k].t() != snapshots[k - 1].t() + 1)
      throw Error(Errc::consistency, "series timestamps are not contiguous");
  }
}

void SyntheticConfig::validate() const {
  if (days < 1) throw Error(Errc::config, "days must be >= 1");
  if (delta_minutes < 1 || 1440 % delta_minutes != 0)
    throw Error(Errc::config, "delta_minutes must divide a day");
  if (!(base_level > 0.0)) throw Error(Errc::config, "base_level must be positive");
  if (!(peak_amplitude >= 0.0)) throw Error(Errc::config, "peak_amplitude must be non-negative");
  if (n_hotspots < 0) throw Error(Errc::config, "n_hotspots must be >= 0");
  if (!(noise_std >= 0.0)) throw Error(Errc::config, "noise_std must be non-negative");
  if (!(weekend_scale > 0.0 && weekend_scale <= 1.0))
    throw Error(Errc::config, "weekend_scale must lie in (0, 1]");
  if (!(peak_noise_factor >= 0.0)) throw Error(Errc::config, "peak_noise_factor must be non-negative");
  if (n_event_sites < 0) throw Error(Errc::config, "n_event_sites must be >= 0");
  if (!(event_amplitude >= 0.0)) throw Error(Errc::config, "event_amplitude must be non-negative");
  if (!(event_probability >= 0.0 && event_probability <= 1.0))
    throw Error(Errc::config, "event_probability must lie in [0, 1]");
}

std::int64_t synthetic_origin_minutes() {
  return sys_days{year{2013} / November / 4}.time_since_epoch().count() * 1440LL;
}

double diurnal_shape(int minute_of_day) {
  // Peaks at 13:30, the middle of the 09:00-18:00 busy period.
  return 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * (minute_of_day - 810) / 1440.0));
}

DatasetSeries synthesize_traffic(const SyntheticConfig& config) {
  config.validate();
  const GridGeometry& g = config.geometry;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Grid kernel = Grid::Zero(g.rows, g.cols);
  const double extent = std::min(g.rows, g.cols);
  for (int h = 0; h < config.n_hotspots; ++h) {
    const double cr = unit(rng) * g.rows;
    const double cc = unit(rng) * g.cols;
    const double sigma = (0.05 + 0.10 * unit(rng)) * extent;
    const double weight = 0.3 + 0.7 * unit(rng);
    for (int i = 0; i < g.rows; ++i)
      for (int j = 0; j < g.cols; ++j) {
        const double dr = i + 0.5 - cr, dc = j + 0.5 - cc;
        kernel(i, j) += weight * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      }
  }
  if (kernel.maxCoeff() > 0.0) kernel /= kernel.maxCoeff();

  DatasetSeries series;
  series.geometry = g;
  series.delta_minutes = config.delta_minutes;
  series.origin_minutes = synthetic_origin_minutes();
  const std::int64_t steps = static_cast<std::int64_t>(config.days) * (1440 / config.delta_minutes);
  series.snapshots.reserve(static_cast<std::size_t>(steps));
  struct EventSite {
    Grid kernel;
    int start = 0, duration = 0;  // minutes of the day
    std::vector<double> amplitude;  // per day, 0 when idle
  };
  std::vector<EventSite> sites;
  {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0xe7e7u};
    std::mt19937_64 ev(seq);
    for (int e = 0; e < config.n_event_sites; ++e) {
      EventSite site;
      const double cr = unit(ev) * g.rows, cc = unit(ev) * g.cols;
      const double sigma = 0.6 + 0.6 * unit(ev);
      site.kernel = Grid(g.rows, g.cols);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) {
          const double dr = i + 0.5 - cr, dc = j + 0.5 - cc;
          site.kernel(i, j) = std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
        }
      site.start = 480 + static_cast<int>(unit(ev) * 720.0);
      site.duration = 120 + static_cast<int>(unit(ev) * 120.0);
      for (int d = 0; d < config.days; ++d) {
        const bool on = unit(ev) < config.event_probability;
        const double scale = 0.5 + unit(ev);
        site.amplitude.push_back(on ? config.event_amplitude * scale : 0.0);
      }
      sites.push_back(std::move(site));
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto truncated = [&] {
    double z;
    do z = gauss(rng);
    while (std::abs(z) > 3.0);
    return z;
  };
  for (std::int64_t t = 0; t < steps; ++t) {
    const TimeInfo info = series.time_info(t);
    const double day_factor = info.day_of_week >= 5 ? config.weekend_scale : 1.0;
    const double activity = config.peak_amplitude * diurnal_shape(info.minute_of_day) * day_factor;
    const bool busy = info.hour >= 7 && info.hour < 19;
    const double sigma = config.noise_std * (busy ? config.peak_noise_factor : 1.0);
    Grid events = Grid::Zero(g.rows, g.cols);
    const auto day = static_cast<std::size_t>(t / (1440 / config.delta_minutes));
    for (const auto& site : sites) {
      const int m = info.minute_of_day - site.start;
      if (site.amplitude[day] > 0.0 && m >= 0 && m < site.duration)
        events += site.kernel * (site.amplitude[day] * std::sin(std::numbers::pi * (m + 0.5) / site.duration));
    }
    Grid values(g.rows, g.cols);
    for (Eigen::Index c = 0; c < values.size(); ++c) {
      double v = config.base_level + kernel.data()[c] * activity + events.data()[c];
      if (sigma > 0.0) v += sigma * truncated();
      values.data()[c] = std::max(0.0, v);
    }
    series.snapshots.emplace_back(t, std::move(values));
  }
  return series;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

DatasetSeries load_grid_csv(std::istream& in, const GridGeometry& geometry, int delta_minutes,
                            LoadReport* report, int utc_offset_minutes) {
  if (delta_minutes < 1 || 1440 % delta_minutes != 0)
    throw Error(Errc::config, "delta_minutes must divide a day");
  const std::int64_t bucket_ms = static_cast<std::int64_t>(delta_minutes) * 60'000;
  const std::int64_t offset_ms = static_cast<std::int64_t>(utc_offset_minutes) * 60'000;

  std::map<std::int64_t, Grid> buckets;
  LoadReport rep;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = view.find(',', start);
      fields.push_back(view.substr(start, comma == std::string_view::npos ? view.npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    std::int64_t ts = 0;
    if (line_no == 1 && !parse_number(fields[0], ts)) continue;  // header row
    std::int64_t cell_id = 0;
    double traffic = 0.0;
    if (fields.size() != 3 || !parse_number(fields[0], ts) || !parse_number(fields[1], cell_id) ||
        !parse_number(fields[2], traffic))
      throw Error(Errc::ingest, "line " + std::to_string(line_no) + ": expected timestamp_ms,cell_id,traffic");
    if (cell_id < 1 || cell_id > geometry.cells())
      throw Error(Errc::range, "line " + std::to_string(line_no) + ": cell_id " + std::to_string(cell_id) +
                                   " outside [1, " + std::to_string(geometry.cells()) + "]");
    if (!std::isfinite(traffic) || traffic < 0.0)
      throw Error(Errc::ingest, "line " + std::to_string(line_no) + ": traffic must be finite and >= 0");
    const std::int64_t bucket = floor_div(ts + offset_ms, bucket_ms);
    auto [it, inserted] = buckets.try_emplace(bucket);
    if (inserted) it->second = Grid::Constant(geometry.rows, geometry.cols, -1.0);
    double& slot = it->second.data()[cell_id - 1];
    slot = slot < 0.0 ? traffic : slot + traffic;
    ++rep.rows;
  }

  DatasetSeries series;
  series.geometry = geometry;
  series.delta_minutes = delta_minutes;
  series.origin_minutes = 0;
  if (!buckets.empty()) {
    const std::int64_t first = buckets.begin()->first;
    const std::int64_t last = buckets.rbegin()->first;
    for (std::int64_t b = first; b <= last; ++b) {
      auto it = buckets.find(b);
      Grid values;
      if (it == buckets.end()) {
        values = Grid::Zero(geometry.rows, geometry.cols);
        ++rep.empty_buckets;
        rep.filled_readings += static_cast<std::size_t>(geometry.cells());
      } else {
        values = std::move(it->second);
        for (Eigen::Index c = 0; c < values.size(); ++c)
          if (values.data()[c] < 0.0) {
            values.data()[c] = 0.0;
            ++rep.filled_readings;
          }
      }
      series.snapshots.emplace_back(b, std::move(values));
      ++rep.buckets;
    }
  }
  if (report) *report = rep;
  return series;
}

DatasetSeries load_grid_csv(const std::filesystem::path& path, const GridGeometry& geometry,
                            int delta_minutes, LoadReport* report, int utc_offset_minutes) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  return load_grid_csv(in, geometry, delta_minutes, report, utc_offset_minutes);
}

SeriesSplit split(const DatasetSeries& series, const SplitSpec& spec) {
  if (spec.train_days < 1 || spec.test_days < 1) throw Error(Errc::config, "split needs >= 1 day each");
  const std::size_t spd = static_cast<std::size_t>(series.steps_per_day());
  const std::size_t n_train = static_cast<std::size_t>(spec.train_days) * spd;
  const std::size_t n_test = static_cast<std::size_t>(spec.test_days) * spd;
  if (n_train + n_test > series.snapshots.size())
    throw Error(Errc::range, "split asks for " + std::to_string(spec.train_days + spec.test_days) +
                                 " days but the series is shorter");
  SeriesSplit out;
  out.train.geometry = out.test.geometry = series.geometry;
  out.train.delta_minutes = out.test.delta_minutes = series.delta_minutes;
  out.train.origin_minutes = out.test.origin_minutes = series.origin_minutes;
  out.train.snapshots.assign(series.snapshots.begin(), series.snapshots.begin() + n_train);
  out.test.snapshots.assign(series.snapshots.begin() + n_train,
                            series.snapshots.begin() + n_train + n_test);
  return out;
}

NormStats fit_normalizer(const DatasetSeries& train) {
  if (train.empty()) throw Error(Errc::empty_input, "cannot fit normalizer on an empty series");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : train.snapshots) {
    sum += s.values().unaryExpr([](double x) { return std::log1p(x); }).sum();
    n += static_cast<std::size_t>(s.values().size());
  }
  NormStats stats{sum / static_cast<double>(n)};
  if (!(stats.log_mean > 0.0))
    throw Error(Errc::degenerate_stats, "training traffic is all zero; log_mean would be 0");
  return stats;
}

DatasetSeries normalized(const DatasetSeries& series, const NormStats& stats) {
  DatasetSeries out = series;
  for (auto& s : out.snapshots) s = TrafficSnapshot(s.t(), normalize(s.values(), stats));
  return out;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(Errc::io, "truncated tensor header");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const TensorBlock& block) {
  const std::size_t n = std::size_t(block.frames) * block.rows * block.cols;
  if (block.values.size() != n) throw Error(Errc::shape, "tensor value count does not match header");
  out.write("SPDR", 4);
  put_u32(out, 1);
  put_u32(out, block.frames);
  put_u32(out, block.rows);
  put_u32(out, block.cols);
  for (float v : block.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error(Errc::io, "tensor write failed");
}

TensorBlock read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::string_view(magic, 4) != "SPDR")
    throw Error(Errc::io, "bad tensor magic");
  if (get_u32(in) != 1) throw Error(Errc::io, "unsupported tensor version");
  TensorBlock block;
  block.frames = get_u32(in);
  block.rows = get_u32(in);
  block.cols = get_u32(in);
  const std::size_t n = std::size_t(block.frames) * block.rows * block.cols;
  block.values.resize(n);
  for (auto& v : block.values) v = std::bit_cast<float>(get_u32(in));
  return block;
}

void write_tensor_file(const std::filesystem::path& path, const TensorBlock& block) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  write_tensor(out, block);
}

TensorBlock read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  return read_tensor(in);
}

void save_series(const std::filesystem::path& path, const DatasetSeries& series) {
  TensorBlock block;
  block.frames = static_cast<std::uint32_t>(series.size());
  block.rows = static_cast<std::uint32_t>(series.geometry.rows);
  block.cols = static_cast<std::uint32_t>(series.geometry.cols);
  block.values.reserve(std::size_t(block.frames) * block.rows * block.cols);
  for (const auto& s : series.snapshots)
    for (Eigen::Index c = 0; c < s.values().size(); ++c)
      block.values.push_back(static_cast<float>(s.values().data()[c]));
  write_tensor_file(path, block);

  nlohmann::json meta = {{"delta_minutes", series.delta_minutes},
                         {"origin_minutes", series.origin_minutes},
                         {"first_t", series.empty() ? 0 : series.first_t()},
                         {"rows", series.geometry.rows},
                         {"cols", series.geometry.cols}};
  std::ofstream side(path.string() + ".json");
  side << meta.dump(2) << "\n";
}

DatasetSeries load_series(const std::filesystem::path& path) {
  const TensorBlock block = read_tensor_file(path);
  std::ifstream side(path.string() + ".json");
  if (!side) throw Error(Errc::io, "missing sidecar " + path.string() + ".json");
  const nlohmann::json meta = nlohmann::json::parse(side);
  DatasetSeries series;
  series.geometry = GridGeometry(static_cast<int>(block.rows), static_cast<int>(block.cols));
  series.delta_minutes = meta.at("delta_minutes").get<int>();
  series.origin_minutes = meta.at("origin_minutes").get<std::int64_t>();
  const std::int64_t first_t = meta.at("first_t").get<std::int64_t>();
  const std::size_t frame = std::size_t(block.rows) * block.cols;
  for (std::uint32_t k = 0; k < block.frames; ++k) {
    Grid values(block.rows, block.cols);
    for (std::size_t c = 0; c < frame; ++c) values.data()[c] = block.values[k * frame + c];
    series.snapshots.emplace_back(first_t + k, std::move(values));
  }
  series.validate();
  return series;
}

}  // namespace spider
