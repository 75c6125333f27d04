#include "spider/policy.hpp"

#include "spider/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace spider {

void PolicyConfig::validate() const {
  net.validate();
  if (net.time_features != 0 && net.time_features != 3) throw Error(Errc::config, "policy time_features must be 0 or 3");
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(Errc::config, "threshold must lie in (0, 1)");
}

PolicyModel policy_init(const PolicyConfig& config) {
  config.validate();
  return PolicyModel{config, nn::ConvNet<float>(config.net, config.seed)};
}

Binarized binarize(const Grid& probabilities, double threshold, std::int64_t t) {
  const GridGeometry g(static_cast<int>(probabilities.rows()), static_cast<int>(probabilities.cols()));
  Binarized out{SelectionMatrix::empty(t, g), Grid::Zero(g.rows, g.cols), false};
  const double lo = probabilities.minCoeff(), hi = probabilities.maxCoeff();
  if (!(hi > lo)) {
    out.degenerate = true;
    return out;
  }
  out.normalized = (probabilities.array() - lo) / (hi - lo);
  BitGrid bits = (out.normalized.array() > threshold).cast<std::uint8_t>();
  out.selection = SelectionMatrix(t, std::move(bits));
  return out;
}

namespace {

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

nn::Mat<float> pack_times(std::span<const TimeFeatures> times) {
  nn::Mat<float> m(3, static_cast<Eigen::Index>(times.size()));
  for (std::size_t b = 0; b < times.size(); ++b)
    for (int i = 0; i < 3; ++i) m(i, static_cast<Eigen::Index>(b)) = static_cast<float>(times[b][static_cast<std::size_t>(i)]);
  return m;
}

std::mt19937_64 policy_rng(std::uint64_t seed, std::uint64_t epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x9011c7u};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<Grid> policy_probabilities(const PolicyModel& model, std::span<const StateWindow> windows,
                                       std::span<const TimeFeatures> times) {
  if (windows.size() != times.size()) throw Error(Errc::shape, "one time feature triple per window");
  std::vector<Grid> out;
  out.reserve(windows.size());
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, windows.size() - start);
    const nn::Maps<float> x = pack_windows(windows.subspan(start, n), model.config.net.window_frames);
    const nn::Mat<float> tm = pack_times(times.subspan(start, n));
    const nn::Maps<float> y = model.net.forward(x, model.config.net.time_features > 0 ? &tm : nullptr);
    const Eigen::Index hw = Eigen::Index(x.h) * x.w;
    for (std::size_t b = 0; b < n; ++b) {
      Grid g(x.h, x.w);
      Eigen::Map<Eigen::RowVectorXd>(g.data(), hw) =
          y.data.row(0).segment(static_cast<Eigen::Index>(b) * hw, hw).unaryExpr(&sigmoid).cast<double>();
      out.push_back(std::move(g));
    }
  }
  return out;
}

PolicyPrediction policy_predict(const PolicyModel& model, const StateWindow& window, const TimeFeatures& time) {
  Grid p = std::move(policy_probabilities(model, std::span(&window, 1), std::span(&time, 1)).front());
  Binarized b = binarize(p, model.config.threshold, window.t());
  return {std::move(b.selection), std::move(p), std::move(b.normalized), b.degenerate};
}

double bce(const Grid& probabilities, const Grid& labels) {
  if (probabilities.rows() != labels.rows() || probabilities.cols() != labels.cols())
    throw Error(Errc::shape, "probabilities and labels differ in shape");
  if (probabilities.size() == 0) throw Error(Errc::empty_input, "bce over an empty grid");
  const Grid p = probabilities.cwiseMax(1e-7).cwiseMin(1.0 - 1e-7);
  return -(labels.array() * p.array().log() + (1.0 - labels.array()) * (1.0 - p.array()).log()).mean();
}

PolicyHistory policy_train(PolicyModel& model, std::span<const SelectionSample> dataset, const TrainHyper& hyper) {
  hyper.validate();
  if (dataset.empty()) throw Error(Errc::empty_input, "policy training needs at least one sample");
  const int frames = model.config.net.window_frames;
  const GridGeometry g = dataset.front().label.geometry();
  const Eigen::Index hw = g.cells();
  const bool timed = model.config.net.time_features > 0;
  nn::Adam<float> opt(hyper.learning_rate);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  PolicyHistory history;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::mt19937_64 rng = policy_rng(hyper.seed, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const double progress = hyper.epochs > 1 ? static_cast<double>(epoch - 1) / (hyper.epochs - 1) : 0.0;
    const double f = hyper.final_lr_fraction;
    opt.set_learning_rate(hyper.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
      const std::size_t n = std::min(static_cast<std::size_t>(hyper.batch_size), order.size() - start);
      std::vector<StateWindow> windows;
      std::vector<TimeFeatures> times;
      nn::Mat<float> labels(1, static_cast<Eigen::Index>(n) * hw);
      for (std::size_t b = 0; b < n; ++b) {
        const SelectionSample& s = dataset[order[start + b]];
        if (!(s.label.geometry() == g)) throw Error(Errc::shape, "selection samples differ in geometry");
        windows.push_back(tail(s.window, frames));
        times.push_back(s.time);
        labels.row(0).segment(static_cast<Eigen::Index>(b) * hw, hw) =
            Eigen::Map<const Eigen::Matrix<std::uint8_t, 1, Eigen::Dynamic>>(s.label.bits().data(), hw).cast<float>();
      }
      const nn::Maps<float> x = pack_windows(windows, frames);
      const nn::Mat<float> tm = pack_times(times);
      nn::ConvNet<float>::Trace trace;
      const nn::Maps<float> y = model.net.forward(x, timed ? &tm : nullptr, &trace);
      const nn::Mat<float> p = y.data.unaryExpr(&sigmoid);
      const nn::Mat<float> pc = p.cwiseMax(1e-7f).cwiseMin(1.0f - 1e-7f);
      loss_sum += -static_cast<double>(
          (labels.array() * pc.array().log() + (1.0f - labels.array()) * (1.0f - pc.array()).log()).sum()) /
                  static_cast<double>(hw);
      nn::Maps<float> d_out = y;
      d_out.data = (p - labels) / static_cast<float>(p.size());
      nn::Grads<float> grads = model.net.params().zeros_like();
      model.net.backward(trace, d_out, grads);
      opt.step(model.net.params(), grads);
    }
    history.epoch_bce.push_back(loss_sum / static_cast<double>(dataset.size()));
  }
  return history;
}

PolicyEvaluation policy_evaluate(const PolicyModel& model, const DatasetSeries& test, const Reconstructor& reconstructor,
                                 const BucketConfig& buckets, const NormStats& norm, std::int64_t first,
                                 std::int64_t last) {
  using clock = std::chrono::steady_clock;
  double latency = 0.0;
  long calls = 0;
  const int frames = std::max(model.config.net.window_frames, reconstructor.window_frames());
  const Selector select = [&](const StateWindow& window, std::int64_t t) {
    const auto t0 = clock::now();
    PolicyPrediction p = policy_predict(model, tail(window, model.config.net.window_frames), time_features(test.time_info(t)));
    latency += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    ++calls;
    return std::move(p.selection);
  };
  PolicyEvaluation out;
  out.run = run_strategy("spider-policy", test, reconstructor, frames, select, buckets, norm, first, last);
  out.mean_latency_ms = calls ? latency / static_cast<double>(calls) : 0.0;
  return out;
}

Calibration calibrate_threshold(const PolicyModel& model, const DatasetSeries& series,
                                const Reconstructor& reconstructor, const NormStats& norm, double epsilon,
                                std::span<const double> thresholds, std::int64_t first, std::int64_t last,
                                int refine) {
  if (thresholds.empty()) throw Error(Errc::empty_input, "no candidate thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end()) ||
      std::adjacent_find(thresholds.begin(), thresholds.end()) != thresholds.end())
    throw Error(Errc::config, "candidate thresholds must be strictly ascending");
  if (!(epsilon > 0.0)) throw Error(Errc::config, "epsilon must be positive");
  if (refine < 0) throw Error(Errc::config, "refine must be >= 0");
  Calibration out;
  PolicyModel trial = model;
  const BucketConfig buckets;
  auto probe = [&](double th) {
    trial.config.threshold = th;
    trial.config.validate();
    const PolicyEvaluation e = policy_evaluate(trial, series, reconstructor, buckets, norm, first, last);
    const auto& o = e.run.report.buckets[overall];
    out.points.push_back({th, o.mean_cells(), o.mean_mae()});
    return o.mean_mae() <= epsilon;
  };
  int best = -1;
  for (std::size_t i = 0; i < thresholds.size(); ++i)
    if (probe(thresholds[i])) best = static_cast<int>(i);
  out.met = best >= 0;
  if (!out.met) {
    out.threshold = std::min_element(out.points.begin(), out.points.end(), [](const auto& a, const auto& b) {
                      return a.mean_mae < b.mean_mae;
                    })->threshold;
    return out;
  }
  double lo = thresholds[static_cast<std::size_t>(best)];
  if (static_cast<std::size_t>(best) + 1 < thresholds.size()) {
    double hi = thresholds[static_cast<std::size_t>(best) + 1];
    for (int k = 0; k < refine; ++k) {
      const double mid = 0.5 * (lo + hi);
      (probe(mid) ? lo : hi) = mid;
    }
  }
  out.threshold = lo;
  return out;
}

void save_policy(const std::filesystem::path& stem, const PolicyModel& model) {
  Checkpoint c;
  c.manifest = {{"kind", "policy"},
                {"config", to_json(model.config.net)},
                {"threshold", model.config.threshold},
                {"seed", model.config.seed}};
  c.params = model.net.params();
  save_checkpoint(stem, c);
}

PolicyModel load_policy(const std::filesystem::path& stem) {
  Checkpoint c = load_checkpoint(stem);
  if (c.manifest.value("kind", "") != "policy") throw Error(Errc::io, stem.string() + " is not a policy checkpoint");
  PolicyConfig cfg;
  cfg.net = convnet_config_from_json(c.manifest.at("config"));
  cfg.threshold = c.manifest.at("threshold").get<double>();
  cfg.seed = c.manifest.at("seed").get<std::uint64_t>();
  PolicyModel m = policy_init(cfg);
  m.net.set_params(std::move(c.params));
  return m;
}

}  // namespace spider
