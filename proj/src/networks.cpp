#include "spider/networks.hpp"

namespace spider::nn {

long long count_flops(const std::vector<LayerDesc>& layers) {
  long long total = 0;
  for (const auto& l : layers) {
    if (l.kind == "conv2d" || l.kind == "conv3d" || l.kind == "upsample" || l.kind == "linear")
      total += 2LL * l.out_elems * l.kernel_volume * l.in_channels;
    else if (l.kind == "sum_pool" || l.kind == "lrelu" || l.kind == "add" || l.kind == "sigmoid")
      continue;
    else
      throw Error(Errc::accounting, "unknown layer kind '" + l.kind + "'");
  }
  return total;
}

void ConvNetConfig::validate() const {
  if (window_frames < 2) throw Error(Errc::config, "window_frames must be >= 2");
  if (depth_kernel() < 1 || depth_kernel() > window_frames)
    throw Error(Errc::config, "temporal_kernel must lie in [1, window_frames]");
  if (n_feature_layers < 1) throw Error(Errc::config, "n_feature_layers must be >= 1");
  if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) throw Error(Errc::config, "lrelu slope must lie in (0, 1)");
  if (channels.size() != 4) throw Error(Errc::config, "channel list needs 4 widths");
  for (int c : channels)
    if (c < 1) throw Error(Errc::config, "channel widths must be >= 1");
  if (pool_factor < 1) throw Error(Errc::config, "pool_factor must be >= 1");
  if (time_features != 0 && time_features != 3) throw Error(Errc::config, "time_features must be 0 or 3");
}

template <class S>
ConvNet<S>::ConvNet(ConvNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const int kt = config_.depth_kernel();
  const int c3 = config_.channels[0], cf = config_.channels[1];
  const int cs1 = config_.channels[2], cs2 = config_.channels[3];
  const int stage_in = c3 * config_.out_depth();
  const int p = config_.pool_factor;
  std::mt19937_64 rng(seed);

  c3_w_ = params_.add("corr.conv3d.w", c3, 9 * kt);
  c3_b_ = params_.add("corr.conv3d.b", c3, 1);
  init_uniform(params_[c3_w_], 9 * kt, 1.0, rng);
  for (int i = 0; i < config_.n_feature_layers; ++i) {
    const int in = i == 0 ? stage_in : cf;
    feat_w_.push_back(params_.add("feat." + std::to_string(i + 1) + ".w", cf, 9 * in));
    feat_b_.push_back(params_.add("feat." + std::to_string(i + 1) + ".b", cf, 1));
    init_uniform(params_[feat_w_.back()], 9 * in, 1.0, rng);
  }
  proj_w_ = params_.add("feat.skip.w", cf, stage_in);
  proj_b_ = params_.add("feat.skip.b", cf, 1);
  init_uniform(params_[proj_w_], stage_in, 1.0, rng);
  if (config_.time_features > 0) {
    time_w_ = params_.add("feat.time.w", cf, config_.time_features);
    time_b_ = params_.add("feat.time.b", cf, 1);
    init_uniform(params_[time_w_], config_.time_features, 0.5, rng);
  }
  up_w_ = params_.add("summary.up.w", p * p * cf, cf);
  up_b_ = params_.add("summary.up.b", cf, 1);
  init_uniform(params_[up_w_], cf, 1.0, rng);
  const int widths[4] = {cf + stage_in, cs1, cs2, 1};
  for (int k = 0; k < 3; ++k) {
    s_w_[k] = params_.add("summary." + std::to_string(k + 1) + ".w", widths[k + 1], 9 * widths[k]);
    s_b_[k] = params_.add("summary." + std::to_string(k + 1) + ".b", widths[k + 1], 1);
    init_uniform(params_[s_w_[k]], 9 * widths[k], 1.0, rng);
  }
}

template <class S>
void ConvNet<S>::set_params(ParamSet<S> params) {
  if (params.size() != params_.size()) throw Error(Errc::shape, "parameter count mismatch");
  for (int i = 0; i < params.size(); ++i)
    if (params.name(i) != params_.name(i) || params[i].rows() != params_[i].rows() ||
        params[i].cols() != params_[i].cols())
      throw Error(Errc::shape, "parameter '" + params.name(i) + "' does not match the architecture");
  params_ = std::move(params);
}

template <class S>
std::vector<int> ConvNet<S>::feature_block_params() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < feat_w_.size(); ++i) {
    out.push_back(feat_w_[i]);
    out.push_back(feat_b_[i]);
  }
  return out;
}

namespace {
bool has_skip(int block) { return block >= 3 && block % 2 == 1; }
}  // namespace

template <class S>
Maps<S> ConvNet<S>::forward(const Maps<S>& input, const Mat<S>* time, Trace* trace) const {
  const double a = config_.lrelu_slope;
  const int cf = config_.channels[1];
  if (input.channels() != config_.window_frames)
    throw Error(Errc::shape, "network expects " + std::to_string(config_.window_frames) + " frames");
  if (config_.time_features > 0 && (!time || time->rows() != config_.time_features || time->cols() != input.batch))
    throw Error(Errc::shape, "network expects time features for every sample");

  const ConvSpec c3spec{1, config_.channels[0], 3, 1, 1};
  Maps<S> corr_pre = conv3d(input, config_.window_frames, config_.depth_kernel(), params_[c3_w_], params_[c3_b_], c3spec);
  Maps<S> corr = leaky_relu(corr_pre, a);
  Maps<S> pooled = sum_pool(corr, config_.pool_factor);

  std::vector<Maps<S>> pre, out;
  out.push_back(pooled);
  for (int i = 1; i <= config_.n_feature_layers; ++i) {
    const int in = out.back().channels();
    Maps<S> z = conv2d(out.back(), params_[feat_w_[i - 1]], params_[feat_b_[i - 1]], conv3x3(in, cf));
    Maps<S> v = leaky_relu(z, a);
    if (has_skip(i)) v.data += out[static_cast<std::size_t>(i - 2)].data;
    if (trace) pre.push_back(std::move(z));
    out.push_back(std::move(v));
  }
  Maps<S> stage = out.back();
  stage.data += conv2d(pooled, params_[proj_w_], params_[proj_b_], ConvSpec{pooled.channels(), cf, 1, 1, 0}).data;
  if (config_.time_features > 0) {
    Mat<S> bias = params_[time_w_] * (*time);
    bias.colwise() += params_[time_b_].col(0);
    add_per_sample(stage, bias);
  }

  Maps<S> up_pre = upsample(stage, params_[up_w_], params_[up_b_], config_.pool_factor, input.h, input.w);
  Maps<S> up = leaky_relu(up_pre, a);
  Maps<S> joined(cf + corr.channels(), up.batch, up.h, up.w);
  joined.data << up.data, corr.data;
  Maps<S> s1_pre = conv2d(joined, params_[s_w_[0]], params_[s_b_[0]], conv3x3(joined.channels(), config_.channels[2]));
  Maps<S> s1 = leaky_relu(s1_pre, a);
  Maps<S> s2_pre = conv2d(s1, params_[s_w_[1]], params_[s_b_[1]], conv3x3(config_.channels[2], config_.channels[3]));
  Maps<S> s2 = leaky_relu(s2_pre, a);
  Maps<S> result = conv2d(s2, params_[s_w_[2]], params_[s_b_[2]], conv3x3(config_.channels[3], 1));

  if (trace) {
    trace->input = input;
    trace->corr_pre = std::move(corr_pre);
    trace->corr = std::move(corr);
    trace->pooled = std::move(pooled);
    trace->block_pre = std::move(pre);
    trace->block_out = std::move(out);
    trace->stage_out = std::move(stage);
    trace->up_pre = std::move(up_pre);
    trace->up = std::move(up);
    trace->joined = std::move(joined);
    trace->s1_pre = std::move(s1_pre);
    trace->s1 = std::move(s1);
    trace->s2_pre = std::move(s2_pre);
    trace->s2 = std::move(s2);
    if (time) trace->time = *time;
  }
  return result;
}

template <class S>
void ConvNet<S>::backward(const Trace& tr, const Maps<S>& d_out, Grads<S>& g) const {
  const double a = config_.lrelu_slope;
  const int cf = config_.channels[1];
  auto gi = [&](int idx) -> Mat<S>& { return g[static_cast<std::size_t>(idx)]; };

  Maps<S> d = conv2d_backward(tr.s2, params_[s_w_[2]], conv3x3(config_.channels[3], 1), d_out, gi(s_w_[2]), gi(s_b_[2]));
  d = leaky_relu_backward(tr.s2_pre, d, a);
  d = conv2d_backward(tr.s1, params_[s_w_[1]], conv3x3(config_.channels[2], config_.channels[3]), d, gi(s_w_[1]), gi(s_b_[1]));
  d = leaky_relu_backward(tr.s1_pre, d, a);
  const Maps<S> d_joined = conv2d_backward(tr.joined, params_[s_w_[0]], conv3x3(tr.joined.channels(), config_.channels[2]),
                                           d, gi(s_w_[0]), gi(s_b_[0]));
  d = Maps<S>(cf, d_joined.batch, d_joined.h, d_joined.w);
  d.data = d_joined.data.topRows(cf);
  d = leaky_relu_backward(tr.up_pre, d, a);
  Maps<S> d_stage = upsample_backward(tr.stage_out, params_[up_w_], config_.pool_factor, d, gi(up_w_), gi(up_b_));

  if (config_.time_features > 0) {
    const Mat<S> dv = sum_per_sample(d_stage);
    gi(time_w_).noalias() += dv * tr.time.transpose();
    gi(time_b_).col(0) += dv.rowwise().sum();
  }
  Maps<S> d_pooled = conv2d_backward(tr.pooled, params_[proj_w_], ConvSpec{tr.pooled.channels(), cf, 1, 1, 0},
                                     d_stage, gi(proj_w_), gi(proj_b_));

  const int n = config_.n_feature_layers;
  std::vector<Maps<S>> d_out_blocks(static_cast<std::size_t>(n + 1));
  d_out_blocks[static_cast<std::size_t>(n)] = std::move(d_stage);
  for (int i = n; i >= 1; --i) {
    Maps<S>& dv = d_out_blocks[static_cast<std::size_t>(i)];
    if (dv.data.size() == 0) continue;
    if (has_skip(i)) {
      Maps<S>& skip = d_out_blocks[static_cast<std::size_t>(i - 2)];
      if (skip.data.size() == 0)
        skip = dv;
      else
        skip.data += dv.data;
    }
    const Maps<S> dz = leaky_relu_backward(tr.block_pre[static_cast<std::size_t>(i - 1)], dv, a);
    const Maps<S>& x = tr.block_out[static_cast<std::size_t>(i - 1)];
    Maps<S> dx = conv2d_backward(x, params_[feat_w_[i - 1]], conv3x3(x.channels(), cf), dz, gi(feat_w_[i - 1]), gi(feat_b_[i - 1]));
    Maps<S>& prev = d_out_blocks[static_cast<std::size_t>(i - 1)];
    if (prev.data.size() == 0)
      prev = std::move(dx);
    else
      prev.data += dx.data;
  }
  d_pooled.data += d_out_blocks[0].data;

  Maps<S> d_corr = sum_pool_backward(d_pooled, config_.pool_factor, tr.corr_pre.h, tr.corr_pre.w);
  d_corr.data += d_joined.data.bottomRows(tr.corr.channels());
  d_corr = leaky_relu_backward(tr.corr_pre, d_corr, a);
  conv3d_backward(tr.input, config_.window_frames, config_.depth_kernel(), params_[c3_w_],
                  ConvSpec{1, config_.channels[0], 3, 1, 1}, d_corr, gi(c3_w_), gi(c3_b_), false);
}

template <class S>
std::vector<LayerDesc> ConvNet<S>::describe(int rows, int cols) const {
  const int p = config_.pool_factor;
  const int c3 = config_.channels[0], cf = config_.channels[1];
  const int stage_in = c3 * config_.out_depth();
  const long long full = 1LL * rows * cols;
  const long long pooled = 1LL * pooled_size(rows, p) * pooled_size(cols, p);
  std::vector<LayerDesc> out;
  out.push_back({"conv3d", full * stage_in, 1, 9 * config_.depth_kernel()});
  out.push_back({"lrelu", full * stage_in, 0, 0});
  out.push_back({"sum_pool", pooled * stage_in, 0, 0});
  for (int i = 1; i <= config_.n_feature_layers; ++i) {
    out.push_back({"conv2d", pooled * cf, i == 1 ? stage_in : cf, 9});
    out.push_back({"lrelu", pooled * cf, 0, 0});
    if (has_skip(i)) out.push_back({"add", pooled * cf, 0, 0});
  }
  out.push_back({"conv2d", pooled * cf, stage_in, 1});
  out.push_back({"add", pooled * cf, 0, 0});
  if (config_.time_features > 0) out.push_back({"linear", cf, config_.time_features, 1});
  out.push_back({"upsample", full * cf, cf, 1});
  out.push_back({"lrelu", full * cf, 0, 0});
  out.push_back({"conv2d", full * config_.channels[2], cf + stage_in, 9});
  out.push_back({"lrelu", full * config_.channels[2], 0, 0});
  out.push_back({"conv2d", full * config_.channels[3], config_.channels[2], 9});
  out.push_back({"lrelu", full * config_.channels[3], 0, 0});
  out.push_back({"conv2d", full, config_.channels[3], 9});
  return out;
}

// ---------------------------------------------------------------------------------------------

void AgentNetConfig::validate() const {
  if (conv1 < 1 || conv2 < 1 || reduce < 1 || hidden < 1) throw Error(Errc::config, "agent widths must be >= 1");
  if (prev_actions_len < 1) throw Error(Errc::config, "prev_actions_len must be >= 1");
  if (pool_factor < 1) throw Error(Errc::config, "pool_factor must be >= 1");
  if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) throw Error(Errc::config, "lrelu slope must lie in (0, 1)");
}

template <class S>
AgentNet<S>::AgentNet(AgentNetConfig config, int rows, int cols, std::uint64_t seed)
    : config_(config), rows_(rows), cols_(cols) {
  config_.validate();
  if (rows < 2 || cols < 2) throw Error(Errc::config, "agent network needs at least a 2x2 grid");
  const ConvSpec rspec{config_.conv2, config_.reduce, 2, 2, 0};
  reduced_h_ = std::max(1, rspec.out_size(pooled_size(rows, config_.pool_factor)));
  reduced_w_ = std::max(1, rspec.out_size(pooled_size(cols, config_.pool_factor)));
  const int features = config_.reduce * reduced_h_ * reduced_w_ + 3 + config_.prev_actions_len;
  std::mt19937_64 rng(seed);
  c1_w_ = params_.add("agent.conv1.w", config_.conv1, 9);
  c1_b_ = params_.add("agent.conv1.b", config_.conv1, 1);
  init_uniform(params_[c1_w_], 9, 1.0, rng);
  c2_w_ = params_.add("agent.conv2.w", config_.conv2, 9 * config_.conv1);
  c2_b_ = params_.add("agent.conv2.b", config_.conv2, 1);
  init_uniform(params_[c2_w_], 9 * config_.conv1, 1.0, rng);
  r_w_ = params_.add("agent.reduce.w", config_.reduce, 4 * config_.conv2);
  r_b_ = params_.add("agent.reduce.b", config_.reduce, 1);
  init_uniform(params_[r_w_], 4 * config_.conv2, 1.0, rng);
  f1_w_ = params_.add("agent.fc1.w", config_.hidden, features);
  f1_b_ = params_.add("agent.fc1.b", config_.hidden, 1);
  init_uniform(params_[f1_w_], features, 1.0, rng);
  f2_w_ = params_.add("agent.fc2.w", 2, config_.hidden);
  f2_b_ = params_.add("agent.fc2.b", 2, 1);
  init_uniform(params_[f2_w_], config_.hidden, 0.5, rng);
}

template <class S>
void AgentNet<S>::set_params(ParamSet<S> params) {
  if (params.size() != params_.size()) throw Error(Errc::shape, "parameter count mismatch");
  for (int i = 0; i < params.size(); ++i)
    if (params.name(i) != params_.name(i) || params[i].rows() != params_[i].rows() ||
        params[i].cols() != params_[i].cols())
      throw Error(Errc::shape, "parameter '" + params.name(i) + "' does not match the architecture");
  params_ = std::move(params);
}

template <class S>
Mat<S> AgentNet<S>::forward(const Maps<S>& frame, const Mat<S>& time, const Mat<S>& prev, Trace* trace) const {
  const double a = config_.lrelu_slope;
  if (frame.channels() != 1 || frame.h != rows_ || frame.w != cols_)
    throw Error(Errc::shape, "agent network expects one frame of the configured grid");
  if (time.rows() != 3 || prev.rows() != config_.prev_actions_len || time.cols() != frame.batch ||
      prev.cols() != frame.batch)
    throw Error(Errc::shape, "agent network side inputs have the wrong shape");

  Maps<S> c1_pre = conv2d(frame, params_[c1_w_], params_[c1_b_], ConvSpec{1, config_.conv1, 3, 1, 1});
  Maps<S> pooled = sum_pool(leaky_relu(c1_pre, a), config_.pool_factor);
  Maps<S> c2_pre = conv2d(pooled, params_[c2_w_], params_[c2_b_], ConvSpec{config_.conv1, config_.conv2, 3, 1, 1});
  Maps<S> c2 = leaky_relu(c2_pre, a);
  Maps<S> r_pre = conv2d(c2, params_[r_w_], params_[r_b_], ConvSpec{config_.conv2, config_.reduce, 2, 2, 0});
  const Mat<S> flat = flatten(leaky_relu(r_pre, a));

  Mat<S> features(flat.rows() + 3 + prev.rows(), frame.batch);
  features << flat, time, prev;
  Mat<S> h_pre = params_[f1_w_] * features;
  h_pre.colwise() += params_[f1_b_].col(0);
  Mat<S> h = leaky_relu(h_pre, a);
  Mat<S> out = params_[f2_w_] * h;
  out.colwise() += params_[f2_b_].col(0);

  if (trace) {
    trace->input = frame;
    trace->c1_pre = std::move(c1_pre);
    trace->pooled = std::move(pooled);
    trace->c2_pre = std::move(c2_pre);
    trace->c2 = std::move(c2);
    trace->r_pre = std::move(r_pre);
    trace->features = std::move(features);
    trace->h_pre = std::move(h_pre);
    trace->h = std::move(h);
  }
  return out;
}

template <class S>
void AgentNet<S>::backward(const Trace& tr, const Mat<S>& d_out, Grads<S>& g) const {
  const double a = config_.lrelu_slope;
  auto gi = [&](int idx) -> Mat<S>& { return g[static_cast<std::size_t>(idx)]; };

  gi(f2_w_).noalias() += d_out * tr.h.transpose();
  gi(f2_b_).col(0) += d_out.rowwise().sum();
  const Mat<S> dh = leaky_relu_backward(tr.h_pre, Mat<S>(params_[f2_w_].transpose() * d_out), a);
  gi(f1_w_).noalias() += dh * tr.features.transpose();
  gi(f1_b_).col(0) += dh.rowwise().sum();
  const Mat<S> dfeat = params_[f1_w_].transpose() * dh;
  const Eigen::Index nflat = Eigen::Index(config_.reduce) * reduced_h_ * reduced_w_;

  Maps<S> d = unflatten(Mat<S>(dfeat.topRows(nflat)), config_.reduce, tr.r_pre.h, tr.r_pre.w);
  d = leaky_relu_backward(tr.r_pre, d, a);
  d = conv2d_backward(tr.c2, params_[r_w_], ConvSpec{config_.conv2, config_.reduce, 2, 2, 0}, d, gi(r_w_), gi(r_b_));
  d = leaky_relu_backward(tr.c2_pre, d, a);
  d = conv2d_backward(tr.pooled, params_[c2_w_], ConvSpec{config_.conv1, config_.conv2, 3, 1, 1}, d, gi(c2_w_), gi(c2_b_));
  d = sum_pool_backward(d, config_.pool_factor, tr.c1_pre.h, tr.c1_pre.w);
  d = leaky_relu_backward(tr.c1_pre, d, a);
  conv2d_backward(tr.input, params_[c1_w_], ConvSpec{1, config_.conv1, 3, 1, 1}, d, gi(c1_w_), gi(c1_b_), false);
}

template class ConvNet<float>;
template class ConvNet<double>;
template class AgentNet<float>;
template class AgentNet<double>;

}  // namespace spider::nn
