#include "spider/core.hpp"

#include <algorithm>

namespace spider {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::shape: return "shape error";
    case Errc::consistency: return "consistency error";
    case Errc::domain: return "domain error";
    case Errc::range: return "range error";
    case Errc::ingest: return "ingestion error";
    case Errc::insufficient_data: return "insufficient data";
    case Errc::config: return "config error";
    case Errc::invalid_action: return "invalid action";
    case Errc::empty_input: return "empty input";
    case Errc::degenerate_stats: return "degenerate statistics";
    case Errc::undefined_denominator: return "undefined denominator";
    case Errc::accounting: return "accounting error";
    case Errc::io: return "i/o error";
  }
  return "error";
}

GridGeometry::GridGeometry(int rows_, int cols_, std::optional<double> area)
    : rows(rows_), cols(cols_), cell_area_km2(area) {
  if (rows < 1 || cols < 1) throw Error(Errc::config, "grid needs at least one row and column");
  if (area && !(*area > 0.0)) throw Error(Errc::config, "cell area must be positive");
}

TrafficSnapshot::TrafficSnapshot(std::int64_t t, Grid values) : t_(t), values_(std::move(values)) {
  if (values_.size() == 0) throw Error(Errc::shape, "snapshot grid is empty");
  if (!values_.allFinite()) throw Error(Errc::domain, "snapshot holds a non-finite value");
  if ((values_.array() < 0.0).any()) throw Error(Errc::domain, "snapshot holds a negative value");
}

SelectionMatrix::SelectionMatrix(std::int64_t t, BitGrid bits) : t_(t), bits_(std::move(bits)) {
  if (bits_.size() == 0) throw Error(Errc::shape, "selection grid is empty");
  if ((bits_.array() > std::uint8_t{1}).any())
    throw Error(Errc::domain, "selection entries must be 0 or 1");
}

SelectionMatrix SelectionMatrix::empty(std::int64_t t, const GridGeometry& g) {
  return SelectionMatrix(t, BitGrid::Zero(g.rows, g.cols));
}

SelectionMatrix SelectionMatrix::full(std::int64_t t, const GridGeometry& g) {
  return SelectionMatrix(t, BitGrid::Ones(g.rows, g.cols));
}

SelectionMatrix SelectionMatrix::from_cells(std::int64_t t, const GridGeometry& g,
                                            std::span<const int> cells) {
  BitGrid bits = BitGrid::Zero(g.rows, g.cols);
  for (int c : cells) {
    if (!g.contains(c)) throw Error(Errc::range, "cell index " + std::to_string(c) + " outside grid");
    bits.data()[c] = 1;
  }
  return SelectionMatrix(t, std::move(bits));
}

int SelectionMatrix::count() const { return static_cast<int>(bits_.cast<int>().sum()); }

std::vector<int> SelectionMatrix::cells() const {
  std::vector<int> out;
  for (Eigen::Index c = 0; c < bits_.size(); ++c)
    if (bits_.data()[c]) out.push_back(static_cast<int>(c));
  return out;
}

SelectionMatrix SelectionMatrix::with(int cell) const {
  if (cell < 0 || cell >= bits_.size()) throw Error(Errc::range, "cell " + std::to_string(cell) + " is off the grid");
  SelectionMatrix copy = *this;
  copy.bits_.data()[cell] = 1;
  return copy;
}

SelectionMatrix SelectionMatrix::without(int cell) const {
  if (cell < 0 || cell >= bits_.size()) throw Error(Errc::range, "cell " + std::to_string(cell) + " is off the grid");
  SelectionMatrix copy = *this;
  copy.bits_.data()[cell] = 0;
  return copy;
}

SparseMeasurement::SparseMeasurement(Grid values, SelectionMatrix mask)
    : values_(std::move(values)), mask_(std::move(mask)) {
  if (values_.rows() != mask_.bits().rows() || values_.cols() != mask_.bits().cols())
    throw Error(Errc::shape, "measurement values and mask differ in shape");
  if (!values_.allFinite()) throw Error(Errc::domain, "measurement holds a non-finite value");
  for (Eigen::Index c = 0; c < values_.size(); ++c)
    if (!mask_.bits().data()[c] && values_.data()[c] != 0.0)
      throw Error(Errc::consistency, "measurement value outside mask");
}

SparseMeasurement SparseMeasurement::empty(std::int64_t t, const GridGeometry& g) {
  return SparseMeasurement(Grid::Zero(g.rows, g.cols), SelectionMatrix::empty(t, g));
}

SparseMeasurement SparseMeasurement::with(int cell, double value) const {
  SparseMeasurement copy = *this;
  copy.values_.data()[cell] = value;
  copy.mask_ = mask_.with(cell);
  return copy;
}

SparseMeasurement SparseMeasurement::without(int cell) const {
  SparseMeasurement copy = *this;
  copy.values_.data()[cell] = 0.0;
  copy.mask_ = mask_.without(cell);
  return copy;
}

StateWindow::StateWindow(std::vector<SparseMeasurement> frames) : frames_(std::move(frames)) {
  if (frames_.empty()) throw Error(Errc::shape, "state window has no frames");
  const GridGeometry g = frames_.front().geometry();
  for (std::size_t k = 1; k < frames_.size(); ++k) {
    if (!(frames_[k].geometry() == g)) throw Error(Errc::shape, "window frames differ in geometry");
    if (frames_[k].t() != frames_[k - 1].t() + 1)
      throw Error(Errc::consistency, "window timestamps must increase by one step");
  }
}

StateWindow StateWindow::with_current(SparseMeasurement frame) const {
  std::vector<SparseMeasurement> frames = frames_;
  frames.back() = std::move(frame);
  return StateWindow(std::move(frames));
}

void QualityConfig::validate() const {
  if (!(epsilon > 0.0)) throw Error(Errc::config, "epsilon must be positive");
  if (!(beta > 0.0 && beta < 1.0)) throw Error(Errc::config, "beta must lie in (0, 1)");
}

SelectionMatrix random_selection(std::int64_t t, const GridGeometry& geometry, int count, std::mt19937_64& rng) {
  const int n = geometry.cells();
  if (count < 0 || count > n) throw Error(Errc::range, "selection count outside [0, cells]");
  std::vector<int> cells(static_cast<std::size_t>(n));
  for (int c = 0; c < n; ++c) cells[static_cast<std::size_t>(c)] = c;
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> pick(k, n - 1);
    std::swap(cells[static_cast<std::size_t>(k)], cells[static_cast<std::size_t>(pick(rng))]);
  }
  cells.resize(static_cast<std::size_t>(count));
  return SelectionMatrix::from_cells(t, geometry, cells);
}

int count_for_rate(double rate, const GridGeometry& geometry) {
  const long n = std::lround(rate * geometry.cells());
  return static_cast<int>(std::clamp<long>(n, 0, geometry.cells()));
}

SparseMeasurement apply_mask(const TrafficSnapshot& snapshot, const SelectionMatrix& selection) {
  if (!(snapshot.geometry() == selection.geometry()))
    throw Error(Errc::shape, "snapshot and selection differ in shape");
  if (snapshot.t() != selection.t())
    throw Error(Errc::consistency, "snapshot and selection timestamps differ");
  Grid values = snapshot.values().cwiseProduct(selection.as_grid());
  return SparseMeasurement(std::move(values), selection);
}

double mae(const TrafficSnapshot& estimate, const TrafficSnapshot& truth) {
  return mae(estimate.values(), truth.values());
}

double nmae(const TrafficSnapshot& estimate, const TrafficSnapshot& truth) {
  return nmae(estimate.values(), truth.values());
}

namespace {
void check_stats(const NormStats& stats) {
  if (!(stats.log_mean > 0.0) || !std::isfinite(stats.log_mean))
    throw Error(Errc::degenerate_stats, "log_mean must be positive");
}
}  // namespace

double normalize(double value, const NormStats& stats) {
  check_stats(stats);
  if (!(value >= 0.0)) throw Error(Errc::domain, "normalize expects non-negative traffic");
  return std::log1p(value) / stats.log_mean;
}

double denormalize(double value, const NormStats& stats) {
  check_stats(stats);
  return std::expm1(value * stats.log_mean);
}

Grid normalize(const Grid& values, const NormStats& stats) {
  check_stats(stats);
  if (!((values.array() >= 0.0).all())) throw Error(Errc::domain, "normalize expects non-negative traffic");
  return values.unaryExpr([&](double x) { return std::log1p(x) / stats.log_mean; });
}

Grid denormalize(const Grid& values, const NormStats& stats) {
  check_stats(stats);
  return values.unaryExpr([&](double x) { return std::expm1(x * stats.log_mean); });
}

}  // namespace spider
