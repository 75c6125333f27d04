#ifndef SPIDER_CORE_HPP
#define SPIDER_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spider {

// Traffic grids are row-major: cell (i, j) is (row, column), flat index i * cols + j.
using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using BitGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Errc {
  shape,
  consistency,
  domain,
  range,
  ingest,
  insufficient_data,
  config,
  invalid_action,
  empty_input,
  degenerate_stats,
  undefined_denominator,
  accounting,
  io,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct GridGeometry {
  int rows = 1;  // X
  int cols = 1;  // Y
  std::optional<double> cell_area_km2;

  GridGeometry() = default;
  GridGeometry(int rows, int cols, std::optional<double> cell_area_km2 = std::nullopt);

  int cells() const { return rows * cols; }
  int index(int row, int col) const { return row * cols + col; }
  int row_of(int cell) const { return cell / cols; }
  int col_of(int cell) const { return cell % cols; }
  bool contains(int cell) const { return cell >= 0 && cell < cells(); }

  friend bool operator==(const GridGeometry& a, const GridGeometry& b) {
    return a.rows == b.rows && a.cols == b.cols;
  }
};

template <class Derived>
GridGeometry geometry_of(const Eigen::DenseBase<Derived>& m) {
  return GridGeometry(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
}

/// Ground-truth traffic volume over the grid at one step index.
class TrafficSnapshot {
 public:
  TrafficSnapshot() = default;
  /// Throws Errc::domain on a negative or non-finite value.
  TrafficSnapshot(std::int64_t t, Grid values);

  std::int64_t t() const { return t_; }
  const Grid& values() const { return values_; }
  GridGeometry geometry() const { return geometry_of(values_); }

 private:
  std::int64_t t_ = 0;
  Grid values_;
};

/// Binary mask of the cells activated for measurement at one step.
class SelectionMatrix {
 public:
  SelectionMatrix() = default;
  SelectionMatrix(std::int64_t t, BitGrid bits);

  static SelectionMatrix empty(std::int64_t t, const GridGeometry& geometry);
  static SelectionMatrix full(std::int64_t t, const GridGeometry& geometry);
  static SelectionMatrix from_cells(std::int64_t t, const GridGeometry& geometry,
                                    std::span<const int> cells);

  std::int64_t t() const { return t_; }
  const BitGrid& bits() const { return bits_; }
  GridGeometry geometry() const { return geometry_of(bits_); }

  bool test(int cell) const { return bits_.data()[cell] != 0; }
  int count() const;
  std::vector<int> cells() const;
  SelectionMatrix with(int cell) const;
  SelectionMatrix without(int cell) const;
  Grid as_grid() const { return bits_.cast<double>(); }

  friend bool operator==(const SelectionMatrix& a, const SelectionMatrix& b) {
    return a.t_ == b.t_ && a.bits_.rows() == b.bits_.rows() && a.bits_.cols() == b.bits_.cols() &&
           a.bits_ == b.bits_;
  }

 private:
  std::int64_t t_ = 0;
  BitGrid bits_;
};

/// M = F o B together with the mask B.
class SparseMeasurement {
 public:
  SparseMeasurement() = default;
  /// Throws Errc::consistency when values are non-zero outside the mask.
  SparseMeasurement(Grid values, SelectionMatrix mask);

  static SparseMeasurement empty(std::int64_t t, const GridGeometry& geometry);

  std::int64_t t() const { return mask_.t(); }
  const Grid& values() const { return values_; }
  const SelectionMatrix& mask() const { return mask_; }
  GridGeometry geometry() const { return geometry_of(values_); }

  /// Reveals `value` at `cell` and sets its mask bit.
  SparseMeasurement with(int cell, double value) const;
  /// Clears `cell` (value and mask bit).
  SparseMeasurement without(int cell) const;

  friend bool operator==(const SparseMeasurement& a, const SparseMeasurement& b) {
    return a.mask_ == b.mask_ && a.values_ == b.values_;
  }

 private:
  Grid values_;
  SelectionMatrix mask_;
};

/// Recent sparse frames, oldest first; the last frame is the current one.
class StateWindow {
 public:
  StateWindow() = default;
  explicit StateWindow(std::vector<SparseMeasurement> frames);

  const std::vector<SparseMeasurement>& frames() const { return frames_; }
  int size() const { return static_cast<int>(frames_.size()); }
  const SparseMeasurement& current() const { return frames_.back(); }
  GridGeometry geometry() const { return frames_.front().geometry(); }
  std::int64_t t() const { return current().t(); }

  StateWindow with_current(SparseMeasurement frame) const;

  friend bool operator==(const StateWindow& a, const StateWindow& b) { return a.frames_ == b.frames_; }

 private:
  std::vector<SparseMeasurement> frames_;
};

struct NormStats {
  double log_mean = 1.0;  // mean of log(1 + x) over the training data
};

struct QualityConfig {
  double epsilon = 0.1;
  double beta = 0.9;

  void validate() const;
};

/// `count` distinct cells drawn uniformly (partial Fisher-Yates over the row-major order).
SelectionMatrix random_selection(std::int64_t t, const GridGeometry& geometry, int count, std::mt19937_64& rng);
/// round(rate * cells), clamped to [0, cells].
int count_for_rate(double rate, const GridGeometry& geometry);

SparseMeasurement apply_mask(const TrafficSnapshot& snapshot, const SelectionMatrix& selection);

template <class A, class B>
double mae(const Eigen::MatrixBase<A>& estimate, const Eigen::MatrixBase<B>& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw Error(Errc::shape, "mae: grid shapes differ");
  if (estimate.size() == 0) throw Error(Errc::shape, "mae: empty grid");
  return (estimate.derived().template cast<double>() - truth.derived().template cast<double>())
      .cwiseAbs()
      .mean();
}

/// Traffic-weighted error: sum|est - truth| / sum|truth|.
template <class A, class B>
double nmae(const Eigen::MatrixBase<A>& estimate, const Eigen::MatrixBase<B>& truth) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols())
    throw Error(Errc::shape, "nmae: grid shapes differ");
  const double denom = truth.derived().template cast<double>().cwiseAbs().sum();
  if (!(denom > 0.0)) throw Error(Errc::undefined_denominator, "nmae: truth is all zero");
  return (estimate.derived().template cast<double>() - truth.derived().template cast<double>())
             .cwiseAbs()
             .sum() /
         denom;
}

double mae(const TrafficSnapshot& estimate, const TrafficSnapshot& truth);
double nmae(const TrafficSnapshot& estimate, const TrafficSnapshot& truth);

/// log(1 + x) / log_mean, element-wise. Throws Errc::domain on negative input.
Grid normalize(const Grid& values, const NormStats& stats);
/// exp(x * log_mean) - 1, element-wise.
Grid denormalize(const Grid& values, const NormStats& stats);
double normalize(double value, const NormStats& stats);
double denormalize(double value, const NormStats& stats);

}  // namespace spider

#endif  // SPIDER_CORE_HPP
