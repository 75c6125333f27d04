#ifndef SPIDER_NETWORKS_HPP
#define SPIDER_NETWORKS_HPP

#include "spider/nn.hpp"

#include <cstdint>
#include <vector>

namespace spider::nn {

/// Three-stage reconstruction topology shared by MTRNet and the policy network.
///
///   correlation capture: conv3d over (time, row, col) -> LReLU -> sum pooling
///   feature extraction:  n conv3x3 + LReLU blocks; blocks (2,3), (4,5), ... form residual pairs
///                        on top of block 1, and a 1x1 projection of the stage input is added
///                        to the stage output (global skip); optional time-feature bias
///   summarization:       learned upsampling to the input size -> LReLU, concatenated with the
///                        full-resolution correlation features, then three conv3x3 layers
///                        (widths s1, s2, 1), LReLU between them
struct ConvNetConfig {
  int window_frames = 7;
  int temporal_kernel = 0;  // 0 means the full window
  int n_feature_layers = 5;
  double lrelu_slope = 0.2;
  std::vector<int> channels = {16, 32, 32, 64};  // correlation, feature, summary-1, summary-2
  int pool_factor = 2;
  int time_features = 0;  // 0, or 3 for (hour, weekday, week-of-month) conditioning

  int depth_kernel() const { return temporal_kernel > 0 ? temporal_kernel : window_frames; }
  int out_depth() const { return window_frames - depth_kernel() + 1; }
  void validate() const;
};

template <class S>
class ConvNet {
 public:
  struct Trace {
    Maps<S> input, corr_pre, corr, pooled;
    std::vector<Maps<S>> block_pre, block_out;  // index 0 of block_out is the pooled input
    Maps<S> stage_out, up_pre, up, joined, s1_pre, s1, s2_pre, s2;
    Mat<S> time;
  };

  ConvNet() = default;
  ConvNet(ConvNetConfig config, std::uint64_t seed);

  const ConvNetConfig& config() const { return config_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }
  void set_params(ParamSet<S> params);

  /// input: window_frames channels (oldest first); time: time_features x batch or nullptr.
  /// Returns one output channel (pre-activation).
  Maps<S> forward(const Maps<S>& input, const Mat<S>* time, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients for dL/d(output).
  void backward(const Trace& trace, const Maps<S>& d_out, Grads<S>& grads) const;

  std::vector<LayerDesc> describe(int rows, int cols) const;

  /// Indices of the feature-extraction block parameters (weights and biases).
  std::vector<int> feature_block_params() const;
  int projection_weight() const { return proj_w_; }

 private:
  ConvSpec conv3x3(int in, int out) const { return ConvSpec{in, out, 3, 1, 1}; }

  ConvNetConfig config_;
  ParamSet<S> params_;
  int c3_w_ = -1, c3_b_ = -1, proj_w_ = -1, proj_b_ = -1, time_w_ = -1, time_b_ = -1;
  int up_w_ = -1, up_b_ = -1;
  std::vector<int> feat_w_, feat_b_;
  int s_w_[3] = {-1, -1, -1}, s_b_[3] = {-1, -1, -1};
};

/// The agent's pseudo-action network: conv3x3 -> LReLU -> sum pool -> conv3x3 -> LReLU ->
/// size-reducing 2x2/stride-2 conv -> LReLU, then two fully connected layers over
/// [features, time features, previous actions] producing two raw outputs.
struct AgentNetConfig {
  int conv1 = 8;
  int conv2 = 16;
  int reduce = 4;
  int hidden = 64;
  int prev_actions_len = 20;
  int pool_factor = 2;
  double lrelu_slope = 0.2;

  void validate() const;
};

template <class S>
class AgentNet {
 public:
  struct Trace {
    Maps<S> input, c1_pre, pooled, c2_pre, c2, r_pre;
    Mat<S> features, h_pre, h;
  };

  AgentNet() = default;
  AgentNet(AgentNetConfig config, int rows, int cols, std::uint64_t seed);

  const AgentNetConfig& config() const { return config_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  ParamSet<S>& params() { return params_; }
  const ParamSet<S>& params() const { return params_; }
  void set_params(ParamSet<S> params);

  /// frame: 1 channel; time: 3 x batch; prev: prev_actions_len x batch. Returns 2 x batch.
  Mat<S> forward(const Maps<S>& frame, const Mat<S>& time, const Mat<S>& prev, Trace* trace = nullptr) const;
  void backward(const Trace& trace, const Mat<S>& d_out, Grads<S>& grads) const;

 private:
  AgentNetConfig config_;
  int rows_ = 0, cols_ = 0, reduced_h_ = 0, reduced_w_ = 0;
  ParamSet<S> params_;
  int c1_w_ = -1, c1_b_ = -1, c2_w_ = -1, c2_b_ = -1, r_w_ = -1, r_b_ = -1;
  int f1_w_ = -1, f1_b_ = -1, f2_w_ = -1, f2_b_ = -1;
};

extern template class ConvNet<float>;
extern template class ConvNet<double>;
extern template class AgentNet<float>;
extern template class AgentNet<double>;

}  // namespace spider::nn

#endif  // SPIDER_NETWORKS_HPP
