#include "spider/mtrnet.hpp"

#include "spider/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace spider {

void TrainHyper::validate() const {
  if (!(learning_rate > 0.0)) throw Error(Errc::config, "learning_rate must be positive");
  if (batch_size < 1) throw Error(Errc::config, "batch_size must be >= 1");
  if (epochs < 0) throw Error(Errc::config, "epochs must be >= 0");
  const auto [lo, hi] = mask_rate_range;
  if (!(lo > 0.0 && lo <= hi && hi < 1.0)) throw Error(Errc::config, "mask_rate_range must satisfy 0 < low <= high < 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw Error(Errc::config, "validation_fraction must lie in [0, 1)");
  if (max_windows_per_epoch < 0) throw Error(Errc::config, "max_windows_per_epoch must be >= 0");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0))
    throw Error(Errc::config, "final_lr_fraction must lie in (0, 1]");
  if (!(persistent_mask_fraction >= 0.0 && persistent_mask_fraction <= 1.0))
    throw Error(Errc::config, "persistent_mask_fraction must lie in [0, 1]");
}

MtrnetModel mtrnet_init(const MtrnetConfig& config, std::uint64_t seed, NormStats norm) {
  if (config.time_features != 0) throw Error(Errc::config, "mtrnet takes no time features");
  MtrnetModel m;
  m.config = config;
  m.seed = seed;
  m.norm = norm;
  m.net = nn::ConvNet<float>(config, seed);
  return m;
}

nn::Maps<float> pack_windows(std::span<const StateWindow> windows, int frames) {
  if (windows.empty()) throw Error(Errc::empty_input, "no windows to pack");
  const GridGeometry g = windows.front().geometry();
  nn::Maps<float> x(frames, static_cast<int>(windows.size()), g.rows, g.cols);
  const Eigen::Index hw = g.cells();
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const StateWindow& w = windows[b];
    if (w.size() != frames)
      throw Error(Errc::shape, "window has " + std::to_string(w.size()) + " frames, model expects " +
                                   std::to_string(frames));
    if (!(w.geometry() == g)) throw Error(Errc::shape, "windows in one batch differ in geometry");
    for (int k = 0; k < frames; ++k) {
      const Grid& v = w.frames()[static_cast<std::size_t>(k)].values();
      if (!v.allFinite()) throw Error(Errc::domain, "window holds a non-finite value");
      x.data.row(k).segment(static_cast<Eigen::Index>(b) * hw, hw) =
          Eigen::Map<const Eigen::RowVectorXd>(v.data(), hw).cast<float>();
    }
  }
  return x;
}

std::vector<Grid> mtrnet_infer_batch(const MtrnetModel& model, std::span<const StateWindow> windows) {
  std::vector<Grid> out;
  out.reserve(windows.size());
  constexpr std::size_t chunk = 64;
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const auto part = windows.subspan(start, std::min(chunk, windows.size() - start));
    const nn::Maps<float> x = pack_windows(part, model.config.window_frames);
    const nn::Maps<float> y = model.net.forward(x, nullptr);
    const Eigen::Index hw = Eigen::Index(x.h) * x.w;
    for (std::size_t b = 0; b < part.size(); ++b) {
      Grid g(x.h, x.w);
      Eigen::Map<Eigen::RowVectorXd>(g.data(), hw) =
          y.data.row(0).segment(static_cast<Eigen::Index>(b) * hw, hw).cast<double>().cwiseMax(0.0);
      const SparseMeasurement& now = part[b].frames().back();
      out.push_back(now.mask().bits().select(now.values(), g));
    }
  }
  return out;
}

TrafficSnapshot mtrnet_infer(const MtrnetModel& model, const StateWindow& window) {
  return TrafficSnapshot(window.t(), std::move(mtrnet_infer_batch(model, std::span(&window, 1)).front()));
}

StateWindow masked_window(const DatasetSeries& series, std::int64_t t, const std::vector<SelectionMatrix>& masks) {
  const auto frames = static_cast<std::int64_t>(masks.size());
  std::vector<SparseMeasurement> out;
  out.reserve(masks.size());
  for (std::int64_t k = 0; k < frames; ++k) out.push_back(apply_mask(series.at(t - frames + 1 + k), masks[k]));
  return StateWindow(std::move(out));
}

namespace {

// Fills one sample of a training batch: frames of the window ending at t, masked at a common
// rate by independent draws or by one shared draw.
void fill_sample(const DatasetSeries& s, std::int64_t t, int frames, double rate, bool persistent,
                 std::mt19937_64& rng, nn::Maps<float>& x, Eigen::MatrixXf& target, Eigen::MatrixXf& observed,
                 int b) {
  const GridGeometry& g = s.geometry;
  const Eigen::Index hw = g.cells();
  const int count = count_for_rate(rate, g);
  const BitGrid shared = persistent ? random_selection(t, g, count, rng).bits() : BitGrid();
  for (int k = 0; k < frames; ++k) {
    const std::int64_t tk = t - frames + 1 + k;
    const SelectionMatrix mask = persistent ? SelectionMatrix(tk, shared) : random_selection(tk, g, count, rng);
    const Grid masked = s.at(tk).values().cwiseProduct(mask.as_grid());
    x.data.row(k).segment(b * hw, hw) = Eigen::Map<const Eigen::RowVectorXd>(masked.data(), hw).cast<float>();
    if (k == frames - 1)
      observed.row(0).segment(b * hw, hw) = Eigen::Map<const Eigen::RowVectorXd>(mask.as_grid().data(), hw).cast<float>();
  }
  target.row(0).segment(b * hw, hw) = Eigen::Map<const Eigen::RowVectorXd>(s.at(t).values().data(), hw).cast<float>();
}

std::mt19937_64 epoch_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace

TrainHistory mtrnet_train(MtrnetModel& model, const DatasetSeries& train, const TrainHyper& hyper) {
  hyper.validate();
  const int frames = model.config.window_frames;
  const int n_windows = train.size() - frames + 1;
  const int n_val = hyper.validation_fraction > 0.0
                        ? std::max(1, static_cast<int>(std::lround(hyper.validation_fraction * n_windows)))
                        : 0;
  const int n_train = n_windows - n_val;
  if (n_windows < 1 || n_train < 1)
    throw Error(Errc::range, "series of " + std::to_string(train.size()) + " steps is too short for " +
                                 std::to_string(frames) + "-frame training windows");
  const std::int64_t t0 = train.first_t() + frames - 1;
  const auto [lo, hi] = hyper.mask_rate_range;

  // Fixed validation draws.
  std::vector<StateWindow> val_windows;
  std::vector<const Grid*> val_truth;
  {
    std::mt19937_64 rng = epoch_rng(hyper.seed, 0xffffffffu);
    std::uniform_real_distribution<double> rate(lo, hi);
    for (int v = 0; v < n_val; ++v) {
      const std::int64_t t = t0 + n_train + v;
      const int count = count_for_rate(rate(rng), train.geometry);
      std::vector<SelectionMatrix> masks;
      for (int k = 0; k < frames; ++k) masks.push_back(random_selection(t - frames + 1 + k, train.geometry, count, rng));
      val_windows.push_back(masked_window(train, t, masks));
      val_truth.push_back(&train.at(t).values());
    }
  }
  auto validation_mae = [&] {
    if (val_windows.empty()) return 0.0;
    const auto est = mtrnet_infer_batch(model, val_windows);
    double sum = 0.0;
    for (std::size_t k = 0; k < est.size(); ++k) sum += mae(est[k], *val_truth[k]);
    return sum / static_cast<double>(est.size());
  };

  TrainHistory history;
  history.initial_val_mae = validation_mae();
  nn::Adam<float> opt(hyper.learning_rate);
  const GridGeometry& g = train.geometry;
  const Eigen::Index hw = g.cells();
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::mt19937_64 rng = epoch_rng(hyper.seed, static_cast<std::uint64_t>(epoch));
    const double progress = hyper.epochs > 1 ? static_cast<double>(epoch - 1) / (hyper.epochs - 1) : 0.0;
    const double f = hyper.final_lr_fraction;
    opt.set_learning_rate(hyper.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
    std::uniform_real_distribution<double> rate(lo, hi), unit(0.0, 1.0);
    std::shuffle(order.begin(), order.end(), rng);
    const int visit = hyper.max_windows_per_epoch > 0 ? std::min(n_train, hyper.max_windows_per_epoch) : n_train;
    double loss_sum = 0.0;
    for (int start = 0; start < visit; start += hyper.batch_size) {
      const int bsz = std::min(hyper.batch_size, visit - start);
      nn::Maps<float> x(frames, bsz, g.rows, g.cols);
      Eigen::MatrixXf target(1, bsz * hw), observed(1, bsz * hw);
      for (int b = 0; b < bsz; ++b) {
        const double r = rate(rng);
        const bool persistent = hyper.persistent_mask_fraction > 0.0 && unit(rng) < hyper.persistent_mask_fraction;
        fill_sample(train, t0 + order[static_cast<std::size_t>(start + b)], frames, r, persistent, rng, x, target,
                    observed, b);
      }

      nn::ConvNet<float>::Trace trace;
      const nn::Maps<float> y = model.net.forward(x, nullptr, &trace);
      // Measured cells pass through unchanged, so only the unmeasured ones carry loss.
      const Eigen::MatrixXf diff = (y.data - target).cwiseProduct((1.0f - observed.array()).matrix());
      loss_sum += static_cast<double>(diff.cwiseAbs().sum()) / static_cast<double>(hw);
      nn::Maps<float> d_out = y;
      const float scale = 1.0f / static_cast<float>(diff.size());
      d_out.data = diff.unaryExpr([scale](float v) { return v > 0.f ? scale : (v < 0.f ? -scale : 0.f); });
      nn::Grads<float> grads = model.net.params().zeros_like();
      model.net.backward(trace, d_out, grads);
      opt.step(model.net.params(), grads);
    }
    history.epochs.push_back({epoch, loss_sum / visit, validation_mae()});
  }
  return history;
}

void save_mtrnet(const std::filesystem::path& stem, const MtrnetModel& model) {
  Checkpoint c;
  c.manifest = {{"kind", "mtrnet"},
                {"config", to_json(model.config)},
                {"seed", model.seed},
                {"norm", {{"log_mean", model.norm.log_mean}}}};
  c.params = model.net.params();
  save_checkpoint(stem, c);
}

MtrnetModel load_mtrnet(const std::filesystem::path& stem) {
  Checkpoint c = load_checkpoint(stem);
  if (c.manifest.value("kind", "") != "mtrnet") throw Error(Errc::io, stem.string() + " is not an mtrnet checkpoint");
  MtrnetModel m = mtrnet_init(convnet_config_from_json(c.manifest.at("config")),
                              c.manifest.at("seed").get<std::uint64_t>(),
                              NormStats{c.manifest.at("norm").at("log_mean").get<double>()});
  m.net.set_params(std::move(c.params));
  return m;
}

Grid MtrnetReconstructor::reconstruct(const StateWindow& window) const {
  return mtrnet_infer(*model_, tail(window, window_frames())).values();
}

std::vector<Grid> MtrnetReconstructor::reconstruct_batch(std::span<const StateWindow> windows) const {
  std::vector<StateWindow> cut;
  cut.reserve(windows.size());
  for (const auto& w : windows) cut.push_back(tail(w, window_frames()));
  return mtrnet_infer_batch(*model_, cut);
}

}  // namespace spider
