#ifndef SPIDER_MTRNET_HPP
#define SPIDER_MTRNET_HPP

#include "spider/core.hpp"
#include "spider/data.hpp"
#include "spider/networks.hpp"
#include "spider/reconstructor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace spider {

using MtrnetConfig = nn::ConvNetConfig;

struct TrainHyper {
  double learning_rate = 1e-4;
  int batch_size = 128;
  int epochs = 20;
  std::pair<double, double> mask_rate_range{0.10, 0.70};
  std::uint64_t seed = 1;
  /// Trailing share of the windows held out for validation.
  double validation_fraction = 0.1;
  /// Caps the training windows visited per epoch (0 = all of them).
  int max_windows_per_epoch = 0;
  /// Cosine decay of the learning rate down to this fraction at the last epoch (1 = constant).
  double final_lr_fraction = 1.0;
  /// Share of training windows whose frames all reuse one mask (0 = independent masks only).
  double persistent_mask_fraction = 0.0;

  void validate() const;
};

struct MtrnetModel {
  MtrnetConfig config;
  std::uint64_t seed = 0;
  NormStats norm;
  nn::ConvNet<float> net;
};

/// Throws Errc::config for an invalid config or one asking for time features.
MtrnetModel mtrnet_init(const MtrnetConfig& config, std::uint64_t seed, NormStats norm = {});

/// Estimate of the current frame in normalized units, clipped at zero. Cells measured in the
/// newest frame keep their measured values. The window must hold exactly `window_frames`
/// normalized frames.
TrafficSnapshot mtrnet_infer(const MtrnetModel& model, const StateWindow& window);
std::vector<Grid> mtrnet_infer_batch(const MtrnetModel& model, std::span<const StateWindow> windows);

struct EpochStats {
  int epoch = 0;
  double train_mae = 0.0;
  double val_mae = 0.0;
};

struct TrainHistory {
  double initial_val_mae = 0.0;
  std::vector<EpochStats> epochs;
};

/// Regresses the complete current frame from randomly masked windows under MAE loss, scored on
/// the cells left unmeasured in the newest frame.
///
/// `train` must already be normalized. Each sample draws a rate from `mask_rate_range` and one
/// independent mask per frame at that rate; masks are redrawn every epoch. Validation windows
/// keep one fixed draw so the epochs are comparable. Throws Errc::range when the series cannot
/// fill a training and a validation window.
TrainHistory mtrnet_train(MtrnetModel& model, const DatasetSeries& train, const TrainHyper& hyper);

/// Window of frames ending at t, each masked with `masks[k]` (oldest first).
StateWindow masked_window(const DatasetSeries& series, std::int64_t t, const std::vector<SelectionMatrix>& masks);

/// Channel-per-frame packing used by the convolutional networks.
nn::Maps<float> pack_windows(std::span<const StateWindow> windows, int frames);

void save_mtrnet(const std::filesystem::path& stem, const MtrnetModel& model);
MtrnetModel load_mtrnet(const std::filesystem::path& stem);

class MtrnetReconstructor final : public Reconstructor {
 public:
  explicit MtrnetReconstructor(const MtrnetModel& model) : model_(&model) {}
  int window_frames() const override { return model_->config.window_frames; }
  std::string name() const override { return "mtrnet"; }
  Grid reconstruct(const StateWindow& window) const override;
  std::vector<Grid> reconstruct_batch(std::span<const StateWindow> windows) const override;

 private:
  const MtrnetModel* model_;
};

}  // namespace spider

#endif  // SPIDER_MTRNET_HPP
