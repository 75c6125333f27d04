#ifndef SPIDER_CLASSIC_HPP
#define SPIDER_CLASSIC_HPP

#include "spider/core.hpp"
#include "spider/reconstructor.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <vector>

namespace spider {

/// Spatial k-nearest-neighbour interpolation (KNN-S).
///
/// Sampled cells keep their value. Every other cell takes the inverse-distance weighted mean of
/// the `k_nn` nearest sampled cells, measured between cell centres; equal distances are ordered
/// by row-major index. Throws Errc::insufficient_data when nothing is sampled.
TrafficSnapshot knn_s(const SparseMeasurement& measurement, int k_nn = 5);

struct CsConfig {
  int rank = 3;
  double lambda = 1e-2;
  int max_iters = 200;
  double tol = 1e-6;
  std::uint64_t seed = 7;

  void validate(Eigen::Index rows, Eigen::Index cols) const;
};

struct StcsConfig : CsConfig {
  double spatial_weight = 0.1;
  double temporal_weight = 1.0;

  void validate(Eigen::Index rows, Eigen::Index cols) const;
};

struct FactorPair {
  Eigen::MatrixXd left;   // n x r
  Eigen::MatrixXd right;  // m x r
};

struct FactorizationResult {
  Eigen::MatrixXd estimate;        // left * right^T, unclipped
  FactorPair factors;
  std::vector<double> objective;   // objective[0] at the initial factors, then one per sweep
  int iterations = 0;
  bool converged = false;
};

struct CsResult {
  TrafficSnapshot estimate;  // clipped at zero
  FactorizationResult detail;
};

/// Optional smoothness penalties added to the masked low-rank objective.
///
/// spatial: weight * ||S L R^T||_F^2 with S an n x n operator over rows (cells).
/// temporal: weight * ||L R^T D||_F^2 with D the m x (m-1) first-difference operator.
struct SmoothnessPenalty {
  const Eigen::SparseMatrix<double>* spatial = nullptr;
  double spatial_weight = 0.0;
  double temporal_weight = 0.0;
};

/// Minimizes lambda (|L|^2 + |R|^2) + |(L R^T - observed) o mask|^2 (+ penalties) by alternating
/// ridge least squares. Each half-step is solved exactly, so the objective never increases.
FactorizationResult factorize_masked(const Eigen::MatrixXd& observed, const Eigen::MatrixXd& mask,
                                     const CsConfig& config, const SmoothnessPenalty& penalty = {});

/// Objective value used by `factorize_masked`.
double masked_objective(const Eigen::MatrixXd& observed, const Eigen::MatrixXd& mask,
                        const FactorPair& factors, double lambda, const SmoothnessPenalty& penalty = {});

/// 4-neighbour graph Laplacian of a rows x cols grid (row-major cell order).
Eigen::SparseMatrix<double> grid_laplacian(int rows, int cols);
/// m x (m-1) first-difference operator: column j is e_{j+1} - e_j.
Eigen::MatrixXd first_difference(int m);

/// Compressive-sensing completion of a single sparse frame.
CsResult cs_complete(const SparseMeasurement& measurement, const CsConfig& config);

/// Spatio-temporal CS: factorizes the (cells x frames) stack of the window under grid-Laplacian
/// and temporal-difference penalties and returns the current frame.
CsResult stcs_complete(const StateWindow& window, const StcsConfig& config);

/// (cells x frames) stacks of values and masks, frames in window order.
Eigen::MatrixXd stack_values(const StateWindow& window);
Eigen::MatrixXd stack_masks(const StateWindow& window);

class KnnReconstructor final : public Reconstructor {
 public:
  explicit KnnReconstructor(int k_nn = 5) : k_nn_(k_nn) {}
  int window_frames() const override { return 1; }
  std::string name() const override { return "knn-s"; }
  Grid reconstruct(const StateWindow& window) const override;

 private:
  int k_nn_;
};

class CsReconstructor final : public Reconstructor {
 public:
  explicit CsReconstructor(CsConfig config = {}) : config_(config) {}
  int window_frames() const override { return 1; }
  std::string name() const override { return "cs"; }
  Grid reconstruct(const StateWindow& window) const override;

 private:
  CsConfig config_;
};

class StcsReconstructor final : public Reconstructor {
 public:
  StcsReconstructor(StcsConfig config, int frames) : config_(config), frames_(frames) {}
  int window_frames() const override { return frames_; }
  std::string name() const override { return "stcs"; }
  Grid reconstruct(const StateWindow& window) const override;

 private:
  StcsConfig config_;
  int frames_;
};

}  // namespace spider

#endif  // SPIDER_CLASSIC_HPP
