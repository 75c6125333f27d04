#include "spider/classic.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace spider {

std::vector<Grid> Reconstructor::reconstruct_batch(std::span<const StateWindow> windows) const {
  std::vector<Grid> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(reconstruct(w));
  return out;
}

StateWindow tail(const StateWindow& window, int frames) {
  if (frames > window.size())
    throw Error(Errc::shape, "window has " + std::to_string(window.size()) + " frames, need " +
                                 std::to_string(frames));
  if (frames == window.size()) return window;
  std::vector<SparseMeasurement> kept(window.frames().end() - frames, window.frames().end());
  return StateWindow(std::move(kept));
}

// ---------------------------------------------------------------------------------------------
// KNN-S

namespace {

struct Neighbour {
  int dist2;
  int cell;
  bool operator<(const Neighbour& o) const { return dist2 != o.dist2 ? dist2 < o.dist2 : cell < o.cell; }
};

}  // namespace

TrafficSnapshot knn_s(const SparseMeasurement& measurement, int k_nn) {
  if (k_nn < 1) throw Error(Errc::config, "k_nn must be >= 1");
  const GridGeometry g = measurement.geometry();
  const auto& bits = measurement.mask().bits();
  const Grid& values = measurement.values();
  const int sampled = measurement.mask().count();
  if (sampled == 0) throw Error(Errc::insufficient_data, "knn_s needs at least one sampled cell");
  const int k = std::min(k_nn, sampled);
  const int max_radius = std::max(g.rows, g.cols);

  Grid out = values;
  std::vector<Neighbour> found;
  for (int i = 0; i < g.rows; ++i) {
    for (int j = 0; j < g.cols; ++j) {
      if (bits(i, j)) continue;
      found.clear();
      // Expand square rings; a ring at Chebyshev radius rho + 1 only holds cells with
      // squared distance >= (rho + 1)^2, so stop once the k-th best is strictly closer.
      for (int rho = 1; rho <= max_radius; ++rho) {
        for (int di = -rho; di <= rho; ++di) {
          const int ii = i + di;
          if (ii < 0 || ii >= g.rows) continue;
          const bool edge_row = (di == -rho || di == rho);
          const int step = edge_row ? 1 : 2 * rho;
          for (int dj = -rho; dj <= rho; dj += step) {
            const int jj = j + dj;
            if (jj < 0 || jj >= g.cols || !bits(ii, jj)) continue;
            found.push_back({di * di + dj * dj, g.index(ii, jj)});
          }
        }
        if (static_cast<int>(found.size()) >= k) {
          std::nth_element(found.begin(), found.begin() + (k - 1), found.end());
          if (found[k - 1].dist2 < (rho + 1) * (rho + 1)) break;
        }
      }
      std::partial_sort(found.begin(), found.begin() + k, found.end());
      double num = 0.0, den = 0.0;
      for (int n = 0; n < k; ++n) {
        const double w = 1.0 / std::sqrt(static_cast<double>(found[n].dist2));
        num += w * values.data()[found[n].cell];
        den += w;
      }
      out(i, j) = num / den;
    }
  }
  return TrafficSnapshot(measurement.t(), std::move(out));
}

// ---------------------------------------------------------------------------------------------
// Masked low-rank factorization

void CsConfig::validate(Eigen::Index rows, Eigen::Index cols) const {
  if (rank < 1) throw Error(Errc::config, "rank must be >= 1");
  if (rank > std::min(rows, cols)) throw Error(Errc::config, "rank exceeds min(rows, cols)");
  if (!(lambda >= 0.0)) throw Error(Errc::config, "lambda must be non-negative");
  if (max_iters < 1) throw Error(Errc::config, "max_iters must be >= 1");
  if (!(tol > 0.0)) throw Error(Errc::config, "tol must be positive");
}

void StcsConfig::validate(Eigen::Index rows, Eigen::Index cols) const {
  CsConfig::validate(rows, cols);
  if (!(spatial_weight >= 0.0) || !(temporal_weight >= 0.0))
    throw Error(Errc::config, "smoothness weights must be non-negative");
  if (spatial_weight > 0.0 && !(lambda > 0.0))
    throw Error(Errc::config, "a spatial penalty needs lambda > 0");
}

Eigen::SparseMatrix<double> grid_laplacian(int rows, int cols) {
  const int n = rows * cols;
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) * 5);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const int c = i * cols + j;
      int degree = 0;
      auto link = [&](int ii, int jj) {
        if (ii < 0 || ii >= rows || jj < 0 || jj >= cols) return;
        trip.emplace_back(c, ii * cols + jj, -1.0);
        ++degree;
      };
      link(i - 1, j);
      link(i + 1, j);
      link(i, j - 1);
      link(i, j + 1);
      trip.emplace_back(c, c, static_cast<double>(degree));
    }
  Eigen::SparseMatrix<double> lap(n, n);
  lap.setFromTriplets(trip.begin(), trip.end());
  return lap;
}

Eigen::MatrixXd first_difference(int m) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, std::max(0, m - 1));
  for (int j = 0; j + 1 < m; ++j) {
    d(j, j) = -1.0;
    d(j + 1, j) = 1.0;
  }
  return d;
}

double masked_objective(const Eigen::MatrixXd& observed, const Eigen::MatrixXd& mask,
                        const FactorPair& f, double lambda, const SmoothnessPenalty& penalty) {
  const Eigen::MatrixXd p = f.left * f.right.transpose();
  double value = lambda * (f.left.squaredNorm() + f.right.squaredNorm()) +
                 (p - observed).cwiseProduct(mask).squaredNorm();
  if (penalty.spatial && penalty.spatial_weight > 0.0)
    value += penalty.spatial_weight * ((*penalty.spatial) * p).squaredNorm();
  if (penalty.temporal_weight > 0.0 && p.cols() > 1)
    value += penalty.temporal_weight * (p * first_difference(static_cast<int>(p.cols()))).squaredNorm();
  return value;
}

namespace {

Eigen::VectorXd solve_small(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, bool regularized) {
  if (regularized) return a.llt().solve(b);
  return a.completeOrthogonalDecomposition().solve(b);
}

}  // namespace

FactorizationResult factorize_masked(const Eigen::MatrixXd& observed, const Eigen::MatrixXd& mask,
                                     const CsConfig& config, const SmoothnessPenalty& penalty) {
  const Eigen::Index n = observed.rows(), m = observed.cols();
  if (mask.rows() != n || mask.cols() != m) throw Error(Errc::shape, "observed and mask differ in shape");
  config.validate(n, m);
  const int r = config.rank;
  const double lambda = config.lambda;
  const bool use_spatial = penalty.spatial && penalty.spatial_weight > 0.0;
  const bool use_temporal = penalty.temporal_weight > 0.0 && m > 1;
  if (use_spatial && (penalty.spatial->rows() != n || penalty.spatial->cols() != n))
    throw Error(Errc::shape, "spatial operator does not match the row count");

  std::vector<std::vector<Eigen::Index>> row_obs(static_cast<std::size_t>(n)), col_obs(static_cast<std::size_t>(m));
  double observed_sum = 0.0;
  Eigen::Index observed_count = 0;
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i)
      if (mask(i, j) != 0.0) {
        row_obs[i].push_back(j);
        col_obs[j].push_back(i);
        observed_sum += observed(i, j);
        ++observed_count;
      }
  if (observed_count < r)
    throw Error(Errc::insufficient_data, "need at least rank observed entries");

  const double scale = observed_sum / static_cast<double>(observed_count);
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FactorPair f{Eigen::MatrixXd(n, r), Eigen::MatrixXd(m, r)};
  for (Eigen::Index k = 0; k < f.left.size(); ++k) f.left.data()[k] = unit(rng) * scale;
  for (Eigen::Index k = 0; k < f.right.size(); ++k) f.right.data()[k] = unit(rng) * scale;

  const Eigen::MatrixXd diff = first_difference(static_cast<int>(m));
  const Eigen::MatrixXd diff_gram = diff * diff.transpose();  // m x m
  const Eigen::MatrixXd ridge = lambda * Eigen::MatrixXd::Identity(r, r);
  const bool regularized = lambda > 0.0;

  Eigen::SparseMatrix<double> sts;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> sparse_solver;
  if (use_spatial) sts = Eigen::SparseMatrix<double>(penalty.spatial->transpose()) * (*penalty.spatial);

  FactorizationResult result;
  result.objective.push_back(masked_objective(observed, mask, f, lambda, penalty));
  FactorPair best = f;
  double best_value = result.objective.back();

  for (int it = 1; it <= config.max_iters; ++it) {
    // Left step: rows of L are coupled only through the spatial operator.
    {
      Eigen::MatrixXd shared = ridge;
      if (use_temporal)
        shared += penalty.temporal_weight * (f.right.transpose() * diff_gram * f.right);
      if (!use_spatial) {
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::MatrixXd a = shared;
          Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
          for (Eigen::Index j : row_obs[i]) {
            a.noalias() += f.right.row(j).transpose() * f.right.row(j);
            b.noalias() += observed(i, j) * f.right.row(j).transpose();
          }
          f.left.row(i) = solve_small(a, b, regularized).transpose();
        }
      } else {
        const Eigen::MatrixXd rgram = penalty.spatial_weight * (f.right.transpose() * f.right);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(sts.nonZeros() * r * r + n * r * r));
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n * r);
        for (Eigen::Index i = 0; i < n; ++i) {
          Eigen::MatrixXd a = shared;
          for (Eigen::Index j : row_obs[i]) {
            a.noalias() += f.right.row(j).transpose() * f.right.row(j);
            b.segment(i * r, r).noalias() += observed(i, j) * f.right.row(j).transpose();
          }
          for (int p = 0; p < r; ++p)
            for (int q = 0; q < r; ++q) trip.emplace_back(i * r + p, i * r + q, a(p, q));
        }
        for (int outer = 0; outer < sts.outerSize(); ++outer)
          for (Eigen::SparseMatrix<double>::InnerIterator e(sts, outer); e; ++e)
            for (int p = 0; p < r; ++p)
              for (int q = 0; q < r; ++q)
                trip.emplace_back(e.row() * r + p, e.col() * r + q, e.value() * rgram(p, q));
        Eigen::SparseMatrix<double> h(n * r, n * r);
        h.setFromTriplets(trip.begin(), trip.end());
        if (it == 1) sparse_solver.analyzePattern(h);
        sparse_solver.factorize(h);
        if (sparse_solver.info() != Eigen::Success)
          throw Error(Errc::domain, "spatial system is not positive definite");
        const Eigen::VectorXd x = sparse_solver.solve(b);
        for (Eigen::Index i = 0; i < n; ++i) f.left.row(i) = x.segment(i * r, r).transpose();
      }
    }
    // Right step: rows of R are coupled only through the temporal operator.
    {
      Eigen::MatrixXd shared = ridge;
      if (use_spatial) {
        const Eigen::MatrixXd sl = (*penalty.spatial) * f.left;
        shared += penalty.spatial_weight * (sl.transpose() * sl);
      }
      if (!use_temporal) {
        for (Eigen::Index j = 0; j < m; ++j) {
          Eigen::MatrixXd a = shared;
          Eigen::VectorXd b = Eigen::VectorXd::Zero(r);
          for (Eigen::Index i : col_obs[j]) {
            a.noalias() += f.left.row(i).transpose() * f.left.row(i);
            b.noalias() += observed(i, j) * f.left.row(i).transpose();
          }
          f.right.row(j) = solve_small(a, b, regularized).transpose();
        }
      } else {
        const Eigen::MatrixXd lgram = penalty.temporal_weight * (f.left.transpose() * f.left);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m * r, m * r);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(m * r);
        for (Eigen::Index j = 0; j < m; ++j) {
          Eigen::MatrixXd a = shared;
          for (Eigen::Index i : col_obs[j]) {
            a.noalias() += f.left.row(i).transpose() * f.left.row(i);
            b.segment(j * r, r).noalias() += observed(i, j) * f.left.row(i).transpose();
          }
          h.block(j * r, j * r, r, r) += a;
          for (Eigen::Index jj = 0; jj < m; ++jj)
            if (diff_gram(j, jj) != 0.0) h.block(j * r, jj * r, r, r) += diff_gram(j, jj) * lgram;
        }
        const Eigen::VectorXd x = solve_small(h, b, regularized);
        for (Eigen::Index j = 0; j < m; ++j) f.right.row(j) = x.segment(j * r, r).transpose();
      }
    }

    const double value = masked_objective(observed, mask, f, lambda, penalty);
    const double previous = result.objective.back();
    result.objective.push_back(value);
    result.iterations = it;
    if (value <= best_value) {
      best_value = value;
      best = f;
    }
    if (value == 0.0 || std::abs(previous - value) <= config.tol * std::max(previous, 1e-300)) {
      result.converged = true;
      break;
    }
  }
  result.factors = std::move(best);
  result.estimate = result.factors.left * result.factors.right.transpose();
  return result;
}

Eigen::MatrixXd stack_values(const StateWindow& window) {
  const GridGeometry g = window.geometry();
  Eigen::MatrixXd out(g.cells(), window.size());
  for (int k = 0; k < window.size(); ++k)
    out.col(k) = Eigen::Map<const Eigen::VectorXd>(window.frames()[k].values().data(), g.cells());
  return out;
}

Eigen::MatrixXd stack_masks(const StateWindow& window) {
  const GridGeometry g = window.geometry();
  Eigen::MatrixXd out(g.cells(), window.size());
  for (int k = 0; k < window.size(); ++k) {
    const Grid m = window.frames()[k].mask().as_grid();
    out.col(k) = Eigen::Map<const Eigen::VectorXd>(m.data(), g.cells());
  }
  return out;
}

CsResult cs_complete(const SparseMeasurement& measurement, const CsConfig& config) {
  const Eigen::MatrixXd observed = measurement.values();
  const Eigen::MatrixXd mask = measurement.mask().as_grid();
  FactorizationResult detail = factorize_masked(observed, mask, config);
  Grid estimate = detail.estimate.cwiseMax(0.0);
  return CsResult{TrafficSnapshot(measurement.t(), std::move(estimate)), std::move(detail)};
}

CsResult stcs_complete(const StateWindow& window, const StcsConfig& config) {
  const GridGeometry g = window.geometry();
  const Eigen::MatrixXd observed = stack_values(window);
  const Eigen::MatrixXd mask = stack_masks(window);
  config.validate(observed.rows(), observed.cols());
  const Eigen::SparseMatrix<double> lap = grid_laplacian(g.rows, g.cols);
  SmoothnessPenalty penalty{&lap, config.spatial_weight, config.temporal_weight};
  FactorizationResult detail = factorize_masked(observed, mask, config, penalty);
  const Eigen::VectorXd last = detail.estimate.col(detail.estimate.cols() - 1).cwiseMax(0.0);
  Grid estimate = Eigen::Map<const Grid>(last.data(), g.rows, g.cols);
  return CsResult{TrafficSnapshot(window.t(), std::move(estimate)), std::move(detail)};
}

Grid KnnReconstructor::reconstruct(const StateWindow& window) const {
  return knn_s(window.current(), k_nn_).values();
}

Grid CsReconstructor::reconstruct(const StateWindow& window) const {
  return cs_complete(window.current(), config_).estimate.values();
}

Grid StcsReconstructor::reconstruct(const StateWindow& window) const {
  return stcs_complete(tail(window, frames_), config_).estimate.values();
}

}  // namespace spider
