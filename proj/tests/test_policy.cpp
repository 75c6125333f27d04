#include <doctest.h>

#include "spider/classic.hpp"
#include "spider/policy.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

using namespace spider;

namespace {

PolicyConfig small_config() {
  PolicyConfig c;
  c.net.window_frames = 3;
  c.net.n_feature_layers = 2;
  c.net.channels = {4, 8, 8, 8};
  c.seed = 3;
  return c;
}

DatasetSeries small_series(int days) {
  SyntheticConfig sc;
  sc.geometry = {6, 6};
  sc.days = days;
  sc.delta_minutes = 60;
  sc.noise_std = 3.0;
  const DatasetSeries raw = synthesize_traffic(sc);
  return normalized(raw, fit_normalizer(raw));
}

/// Labels follow the hour: the top half of the grid by day, the bottom half by night.
std::vector<SelectionSample> toy_dataset(const DatasetSeries& s, int n) {
  std::mt19937_64 rng(5);
  std::vector<SelectionSample> out;
  for (int i = 0; i < n; ++i) {
    const std::int64_t t = s.first_t() + 3 + i;
    std::vector<SparseMeasurement> frames;
    for (std::int64_t k = t - 2; k < t; ++k) frames.push_back(apply_mask(s.at(k), random_selection(k, s.geometry, 12, rng)));
    frames.push_back(SparseMeasurement::empty(t, s.geometry));
    const TimeInfo info = s.time_info(t);
    std::vector<int> cells;
    const bool day = info.hour >= 7 && info.hour < 19;
    for (int c = 0; c < 36; ++c)
      if ((c < 18) == day) cells.push_back(c);
    out.push_back({StateWindow(frames), SelectionMatrix::from_cells(t, s.geometry, cells), time_features(info)});
  }
  return out;
}

Grid row(std::initializer_list<double> v) {
  Grid g(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) g(0, i++) = x;
  return g;
}

}  // namespace

TEST_CASE("binarize examples") {
  const auto two = binarize(row({0.2, 0.8}), 0.5, 0);
  CHECK(two.selection.cells() == std::vector<int>{1});
  CHECK(two.normalized == row({0.0, 1.0}));
  const auto three = binarize(row({0.1, 0.5, 0.9}), 0.5, 0);
  CHECK(three.normalized.isApprox(row({0.0, 0.5, 1.0})));
  CHECK(three.selection.cells() == std::vector<int>{2});
  const auto flat = binarize(Grid::Constant(3, 3, 0.7), 0.5, 0);
  CHECK(flat.degenerate);
  CHECK(flat.selection.count() == 0);
}

TEST_CASE("binarize is invariant under positive affine maps") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Grid p(4, 5);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = u(rng);
    const double scale = 0.25 + 4.0 * u(rng), shift = u(rng) - 0.5;
    const auto a = binarize(p, 0.5, 1), b = binarize(p.array() * scale + shift, 0.5, 1),
               c = binarize(p.array() + shift, 0.5, 1);
    CHECK(a.selection.bits() == b.selection.bits());
    CHECK(a.selection.bits() == c.selection.bits());
    CHECK(a.selection.count() <= 20);
  }
}

TEST_CASE("bce examples") {
  Grid labels(2, 2);
  labels << 1, 0, 0, 1;
  CHECK(bce(labels, labels) < 1e-6);
  CHECK(bce(Grid::Constant(2, 2, 0.5), labels) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(bce(Grid::Constant(1, 2, 0.5), labels), Error);
}

TEST_CASE("prediction shape and range") {
  const auto model = policy_init(small_config());
  const auto s = small_series(1);
  const auto data = toy_dataset(s, 4);
  const auto p = policy_predict(model, data[0].window, data[0].time);
  CHECK(p.probabilities.rows() == 6);
  CHECK(p.probabilities.cols() == 6);
  CHECK(p.probabilities.minCoeff() > 0.0);
  CHECK(p.probabilities.maxCoeff() < 1.0);
  CHECK(p.selection.count() <= 36);
  CHECK(p.selection.t() == data[0].window.t());
  PolicyConfig bad = small_config();
  bad.threshold = 1.0;
  CHECK_THROWS_AS(policy_init(bad), Error);
}

TEST_CASE("training lowers bce and is reproducible") {
  const auto s = small_series(3);
  const auto data = toy_dataset(s, 60);
  TrainHyper h;
  h.epochs = 60;
  h.batch_size = 8;
  h.learning_rate = 3e-3;
  h.seed = 2;
  auto a = policy_init(small_config()), b = policy_init(small_config());
  const auto ha = policy_train(a, data, h), hb = policy_train(b, data, h);
  REQUIRE(ha.epoch_bce.size() == 60);
  CHECK(ha.epoch_bce == hb.epoch_bce);
  CHECK(a.net.params().checksum() == b.net.params().checksum());
  CHECK(ha.epoch_bce.back() < 0.5 * ha.epoch_bce.front());
  CHECK_THROWS_AS(policy_train(a, std::vector<SelectionSample>{}, h), Error);
}

TEST_CASE("evaluation with a constant policy selects nothing") {
  const auto s = small_series(1);
  auto model = policy_init(small_config());
  for (int i = 0; i < model.net.params().size(); ++i) model.net.params()[i].setZero();
  const FunctionReconstructor pass(1, [](const StateWindow& w) { return Grid(w.current().values()); });
  const auto ev = policy_evaluate(model, s, pass, BucketConfig{}, NormStats{1.0}, s.first_t(), s.first_t() + 9);
  CHECK(ev.run.report.buckets[overall].n == 10);
  CHECK(ev.run.report.buckets[overall].mean_cells() == 0.0);
  CHECK(ev.run.report.buckets[overall].mean_nmae() == doctest::Approx(1.0));
  CHECK(ev.mean_latency_ms > 0.0);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  const auto dir = std::filesystem::temp_directory_path() / "spider_test_policy";
  std::filesystem::create_directories(dir);
  PolicyConfig cfg = small_config();
  cfg.threshold = 0.6;
  const auto model = policy_init(cfg);
  save_policy(dir / "p", model);
  const auto back = load_policy(dir / "p");
  CHECK(back.config.threshold == 0.6);
  CHECK(back.config.net.time_features == 3);
  CHECK(back.net.params().checksum() == model.net.params().checksum());
  CHECK_THROWS_AS(load_policy(dir / "none"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("threshold calibration") {
  const DatasetSeries s = small_series(2);
  const PolicyModel model = policy_init(small_config());
  const KnnReconstructor knn;
  const NormStats norm{1.0};
  const std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 0.9};
  const std::int64_t first = s.first_t() + 2, last = first + 11;

  const Calibration loose = calibrate_threshold(model, s, knn, norm, 1e9, grid, first, last, 3);
  CHECK(loose.met);
  CHECK(loose.threshold == 0.9);
  CHECK(loose.points.size() == grid.size());

  const Calibration strict = calibrate_threshold(model, s, knn, norm, 1e-12, grid, first, last, 3);
  CHECK_FALSE(strict.met);
  const auto lowest = std::min_element(strict.points.begin(), strict.points.end(),
                                       [](const auto& a, const auto& b) { return a.mean_mae < b.mean_mae; });
  CHECK(strict.threshold == lowest->threshold);

  // Between the two: the choice meets epsilon and refinement probes land inside the bracket.
  const double eps = 0.5 * (loose.points.front().mean_mae + loose.points.back().mean_mae);
  const Calibration mid = calibrate_threshold(model, s, knn, norm, eps, grid, first, last, 3);
  REQUIRE(mid.met);
  const auto chosen = std::find_if(mid.points.begin(), mid.points.end(),
                                   [&](const auto& p) { return p.threshold == mid.threshold; });
  REQUIRE(chosen != mid.points.end());
  CHECK(chosen->mean_mae <= eps);
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (mid.points[i].mean_mae <= eps) CHECK(mid.threshold >= grid[i]);
  CHECK(mid.points.size() <= grid.size() + 3);
  for (std::size_t i = grid.size(); i < mid.points.size(); ++i) {
    CHECK(mid.points[i].threshold > grid.front());
    CHECK(mid.points[i].threshold < grid.back());
  }

  CHECK_THROWS_AS(calibrate_threshold(model, s, knn, norm, 0.1, std::vector<double>{0.5, 0.3}, first, last), Error);
  CHECK_THROWS_AS(calibrate_threshold(model, s, knn, norm, 0.1, std::vector<double>{}, first, last), Error);
}
