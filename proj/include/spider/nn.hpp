#ifndef SPIDER_NN_HPP
#define SPIDER_NN_HPP

// Minimal dense building blocks for the reconstruction, policy, and agent networks.
//
// Feature maps are stored channel-major: a `Maps` holds a (channels x batch*h*w) column-major
// matrix, so each pixel's channel vector is contiguous and convolutions reduce to one GEMM over
// an im2col buffer. Every primitive is a free function templated on the scalar type; the float
// instantiation trains, the double one backs the finite-difference gradient checks.

#include "spider/core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace spider::nn {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
struct Maps {
  Mat<S> data;  // channels x (batch * h * w)
  int batch = 0;
  int h = 0;
  int w = 0;

  Maps() = default;
  Maps(int channels, int batch_, int h_, int w_)
      : data(Mat<S>::Zero(channels, Eigen::Index(batch_) * h_ * w_)), batch(batch_), h(h_), w(w_) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index pixel(int b, int y, int x) const { return (Eigen::Index(b) * h + y) * w + x; }
};

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
  int fan_in() const { return in_channels * kernel * kernel; }
};

// ---------------------------------------------------------------------------------------------
// Parameters

template <class S>
class ParamSet {
 public:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(std::move(name));
    values_.push_back(Mat<S>::Zero(rows, cols));
    return static_cast<int>(values_.size()) - 1;
  }

  int size() const { return static_cast<int>(values_.size()); }
  Mat<S>& operator[](int i) { return values_[static_cast<std::size_t>(i)]; }
  const Mat<S>& operator[](int i) const { return values_[static_cast<std::size_t>(i)]; }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  int find(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (names_[static_cast<std::size_t>(i)] == name) return i;
    return -1;
  }

  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::vector<Mat<S>> zeros_like() const {
    std::vector<Mat<S>> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(Mat<S>::Zero(v.rows(), v.cols()));
    return out;
  }

  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& v : values_) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
      for (std::size_t k = 0; k < std::size_t(v.size()) * sizeof(S); ++k) {
        h ^= bytes[k];
        h *= 1099511628211ULL;
      }
    }
    return h;
  }

  template <class T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (int i = 0; i < size(); ++i) {
      const int k = out.add(name(i), (*this)[i].rows(), (*this)[i].cols());
      out[k] = (*this)[i].template cast<T>();
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Mat<S>> values_;
};

template <class S>
using Grads = std::vector<Mat<S>>;

/// Uniform(-a, a) weights with a = gain * sqrt(3 / fan_in); draws in double so float and double
/// networks built from one seed agree up to rounding.
template <class S>
void init_uniform(Mat<S>& w, int fan_in, double gain, std::mt19937_64& rng) {
  const double a = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(dist(rng));
}

template <class S>
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamSet<S>& params, const Grads<S>& grads) {
    if (m_.empty()) {
      m_ = params.zeros_like();
      v_ = params.zeros_like();
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const S step = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    const S b1 = static_cast<S>(b1_), b2 = static_cast<S>(b2_);
    const S eps = static_cast<S>(eps_ * std::sqrt(c2));
    for (int i = 0; i < params.size(); ++i) {
      auto& m = m_[static_cast<std::size_t>(i)];
      auto& v = v_[static_cast<std::size_t>(i)];
      const auto& g = grads[static_cast<std::size_t>(i)];
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g.cwiseAbs2();
      params[i].array() -= step * m.array() / (v.array().sqrt() + eps);
    }
  }

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  Grads<S> m_, v_;
};

// ---------------------------------------------------------------------------------------------
// Convolution via im2col. Columns of the buffer are output pixels; rows are ordered
// (kernel offset, channel) over the channel range [c0, c0 + cc).

template <class S>
Mat<S> im2col(const Maps<S>& x, int c0, int cc, const ConvSpec& spec, int ho, int wo) {
  const int kk = spec.kernel * spec.kernel;
  Mat<S> col(Eigen::Index(kk) * cc, Eigen::Index(x.batch) * ho * wo);
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index p = (Eigen::Index(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < spec.kernel; ++ky) {
          const int iy = oy * spec.stride - spec.pad + ky;
          for (int kx = 0; kx < spec.kernel; ++kx) {
            const int ix = ox * spec.stride - spec.pad + kx;
            auto dst = col.col(p).segment(Eigen::Index(ky * spec.kernel + kx) * cc, cc);
            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w)
              dst.setZero();
            else
              dst = x.data.col(x.pixel(b, iy, ix)).segment(c0, cc);
          }
        }
      }
  return col;
}

template <class S>
void col2im_add(const Mat<S>& col, Maps<S>& dx, int c0, int cc, const ConvSpec& spec, int ho, int wo) {
  for (int b = 0; b < dx.batch; ++b)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index p = (Eigen::Index(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < spec.kernel; ++ky) {
          const int iy = oy * spec.stride - spec.pad + ky;
          if (iy < 0 || iy >= dx.h) continue;
          for (int kx = 0; kx < spec.kernel; ++kx) {
            const int ix = ox * spec.stride - spec.pad + kx;
            if (ix < 0 || ix >= dx.w) continue;
            dx.data.col(dx.pixel(b, iy, ix)).segment(c0, cc) +=
                col.col(p).segment(Eigen::Index(ky * spec.kernel + kx) * cc, cc);
          }
        }
      }
}

/// 2D convolution. weight: out x (kernel^2 * in), bias: out x 1.
template <class S>
Maps<S> conv2d(const Maps<S>& x, const Mat<S>& weight, const Mat<S>& bias, const ConvSpec& spec) {
  const int ho = spec.out_size(x.h), wo = spec.out_size(x.w);
  Maps<S> y;
  y.batch = x.batch;
  y.h = ho;
  y.w = wo;
  if (spec.kernel == 1 && spec.stride == 1 && spec.pad == 0)
    y.data.noalias() = weight * x.data;
  else
    y.data.noalias() = weight * im2col(x, 0, x.channels(), spec, ho, wo);
  y.data.colwise() += bias.col(0);
  return y;
}

/// Accumulates weight/bias gradients; returns the input gradient when `need_input` is set.
template <class S>
Maps<S> conv2d_backward(const Maps<S>& x, const Mat<S>& weight, const ConvSpec& spec, const Maps<S>& dy,
                        Mat<S>& dweight, Mat<S>& dbias, bool need_input = true) {
  dbias.col(0) += dy.data.rowwise().sum();
  Maps<S> dx;
  if (spec.kernel == 1 && spec.stride == 1 && spec.pad == 0) {
    dweight.noalias() += dy.data * x.data.transpose();
    if (need_input) {
      dx = Maps<S>(x.channels(), x.batch, x.h, x.w);
      dx.data.noalias() = weight.transpose() * dy.data;
    }
    return dx;
  }
  const Mat<S> col = im2col(x, 0, x.channels(), spec, dy.h, dy.w);
  dweight.noalias() += dy.data * col.transpose();
  if (need_input) {
    dx = Maps<S>(x.channels(), x.batch, x.h, x.w);
    const Mat<S> dcol = weight.transpose() * dy.data;
    col2im_add(dcol, dx, 0, x.channels(), spec, dy.h, dy.w);
  }
  return dx;
}

/// 3D convolution over (depth, row, col) with "valid" depth extent and `spec` in the plane.
///
/// Input channels are depth-major: channel d * in + c. The kernel spans `depth_kernel` slices;
/// the output holds (depth - depth_kernel + 1) slices of spec.out_channels, also depth-major.
/// weight: out x (kernel^2 * depth_kernel * in).
template <class S>
Maps<S> conv3d(const Maps<S>& x, int depth, int depth_kernel, const Mat<S>& weight, const Mat<S>& bias,
               const ConvSpec& spec) {
  const int in = x.channels() / depth;
  const int out_depth = depth - depth_kernel + 1;
  const int ho = spec.out_size(x.h), wo = spec.out_size(x.w);
  Maps<S> y(spec.out_channels * out_depth, x.batch, ho, wo);
  for (int d = 0; d < out_depth; ++d) {
    const Mat<S> col = im2col(x, d * in, depth_kernel * in, spec, ho, wo);
    auto slice = y.data.middleRows(Eigen::Index(d) * spec.out_channels, spec.out_channels);
    slice.noalias() = weight * col;
    slice.colwise() += bias.col(0);
  }
  return y;
}

template <class S>
Maps<S> conv3d_backward(const Maps<S>& x, int depth, int depth_kernel, const Mat<S>& weight,
                        const ConvSpec& spec, const Maps<S>& dy, Mat<S>& dweight, Mat<S>& dbias,
                        bool need_input = true) {
  const int in = x.channels() / depth;
  const int out_depth = depth - depth_kernel + 1;
  Maps<S> dx;
  if (need_input) dx = Maps<S>(x.channels(), x.batch, x.h, x.w);
  for (int d = 0; d < out_depth; ++d) {
    const auto g = dy.data.middleRows(Eigen::Index(d) * spec.out_channels, spec.out_channels);
    const Mat<S> col = im2col(x, d * in, depth_kernel * in, spec, dy.h, dy.w);
    dbias.col(0) += g.rowwise().sum();
    dweight.noalias() += g * col.transpose();
    if (need_input) {
      const Mat<S> dcol = weight.transpose() * g;
      col2im_add(dcol, dx, d * in, depth_kernel * in, spec, dy.h, dy.w);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------------------------
// Pointwise and pooling

template <class S>
Mat<S> leaky_relu(const Mat<S>& x, double slope) {
  const S a = static_cast<S>(slope);
  return x.unaryExpr([a](S v) { return v >= S(0) ? v : a * v; });
}

/// dL/dx given the pre-activation x and dL/dy.
template <class S>
Mat<S> leaky_relu_backward(const Mat<S>& x, const Mat<S>& dy, double slope) {
  const S a = static_cast<S>(slope);
  return x.binaryExpr(dy, [a](S v, S g) { return v >= S(0) ? g : a * g; });
}

template <class S>
Maps<S> leaky_relu(const Maps<S>& x, double slope) {
  Maps<S> y;
  y.batch = x.batch;
  y.h = x.h;
  y.w = x.w;
  y.data = leaky_relu(x.data, slope);
  return y;
}

template <class S>
Maps<S> leaky_relu_backward(const Maps<S>& x, const Maps<S>& dy, double slope) {
  Maps<S> dx;
  dx.batch = x.batch;
  dx.h = x.h;
  dx.w = x.w;
  dx.data = leaky_relu_backward(x.data, dy.data, slope);
  return dx;
}

inline int pooled_size(int n, int factor) { return (n + factor - 1) / factor; }

/// Non-overlapping sum pooling; partial windows at the border are summed as-is.
template <class S>
Maps<S> sum_pool(const Maps<S>& x, int factor) {
  Maps<S> y(x.channels(), x.batch, pooled_size(x.h, factor), pooled_size(x.w, factor));
  for (int b = 0; b < x.batch; ++b)
    for (int iy = 0; iy < x.h; ++iy)
      for (int ix = 0; ix < x.w; ++ix) y.data.col(y.pixel(b, iy / factor, ix / factor)) += x.data.col(x.pixel(b, iy, ix));
  return y;
}

template <class S>
Maps<S> sum_pool_backward(const Maps<S>& dy, int factor, int h, int w) {
  Maps<S> dx(dy.channels(), dy.batch, h, w);
  for (int b = 0; b < dy.batch; ++b)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) dx.data.col(dx.pixel(b, iy, ix)) = dy.data.col(dy.pixel(b, iy / factor, ix / factor));
  return dx;
}

/// Learned upsampling: a factor x factor, stride-factor transposed convolution cropped to h x w.
/// weight: (factor^2 * out) x in, rows grouped by offset (oy * factor + ox).
template <class S>
Maps<S> upsample(const Maps<S>& x, const Mat<S>& weight, const Mat<S>& bias, int factor, int h, int w) {
  const int out = static_cast<int>(bias.rows());
  const Mat<S> z = weight * x.data;
  Maps<S> y(out, x.batch, h, w);
  for (int b = 0; b < x.batch; ++b)
    for (int oy = 0; oy < h; ++oy)
      for (int ox = 0; ox < w; ++ox) {
        const int off = (oy % factor) * factor + (ox % factor);
        y.data.col(y.pixel(b, oy, ox)) =
            z.col(x.pixel(b, oy / factor, ox / factor)).segment(Eigen::Index(off) * out, out) + bias.col(0);
      }
  return y;
}

template <class S>
Maps<S> upsample_backward(const Maps<S>& x, const Mat<S>& weight, int factor, const Maps<S>& dy,
                          Mat<S>& dweight, Mat<S>& dbias) {
  const int out = dy.channels();
  Mat<S> dz = Mat<S>::Zero(weight.rows(), x.data.cols());
  for (int b = 0; b < dy.batch; ++b)
    for (int oy = 0; oy < dy.h; ++oy)
      for (int ox = 0; ox < dy.w; ++ox) {
        const int off = (oy % factor) * factor + (ox % factor);
        dz.col(x.pixel(b, oy / factor, ox / factor)).segment(Eigen::Index(off) * out, out) +=
            dy.data.col(dy.pixel(b, oy, ox));
      }
  dbias.col(0) += dy.data.rowwise().sum();
  dweight.noalias() += dz * x.data.transpose();
  Maps<S> dx(x.channels(), x.batch, x.h, x.w);
  dx.data.noalias() = weight.transpose() * dz;
  return dx;
}

/// Adds a per-sample channel vector (channels x batch) to every pixel of that sample.
template <class S>
void add_per_sample(Maps<S>& x, const Mat<S>& v) {
  const Eigen::Index hw = Eigen::Index(x.h) * x.w;
  for (int b = 0; b < x.batch; ++b) x.data.middleCols(b * hw, hw).colwise() += v.col(b);
}

template <class S>
Mat<S> sum_per_sample(const Maps<S>& dy) {
  const Eigen::Index hw = Eigen::Index(dy.h) * dy.w;
  Mat<S> out(dy.channels(), dy.batch);
  for (int b = 0; b < dy.batch; ++b) out.col(b) = dy.data.middleCols(b * hw, hw).rowwise().sum();
  return out;
}

/// (channels x batch*h*w) -> (channels*h*w x batch), pixel-major within a sample.
template <class S>
Mat<S> flatten(const Maps<S>& x) {
  const Eigen::Index hw = Eigen::Index(x.h) * x.w;
  Mat<S> out(x.channels() * hw, x.batch);
  for (int b = 0; b < x.batch; ++b)
    out.col(b) = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(x.data.col(b * hw).data(), x.channels() * hw);
  return out;
}

template <class S>
Maps<S> unflatten(const Mat<S>& v, int channels, int h, int w) {
  Maps<S> x(channels, static_cast<int>(v.cols()), h, w);
  const Eigen::Index hw = Eigen::Index(h) * w;
  for (int b = 0; b < x.batch; ++b)
    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>(x.data.col(b * hw).data(), channels * hw) = v.col(b);
  return x;
}

// ---------------------------------------------------------------------------------------------
// Accounting

/// One layer as seen by the FLOP counter.
struct LayerDesc {
  std::string kind;  // conv2d, conv3d, upsample, linear, sum_pool, lrelu, add, sigmoid
  long long out_elems = 0;  // output elements per sample, channels included
  int in_channels = 0;
  int kernel_volume = 0;    // kh*kw (*kd for conv3d); 1 for linear and upsample
};

/// 2 * out_elems * kernel_volume * in_channels for every convolution-like layer (conv2d, conv3d,
/// upsample, linear); pooling, activations, and additions count zero. Throws Errc::accounting on
/// an unknown kind.
long long count_flops(const std::vector<LayerDesc>& layers);

}  // namespace spider::nn

#endif  // SPIDER_NN_HPP
