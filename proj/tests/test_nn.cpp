#include <doctest.h>

#include "spider/networks.hpp"

#include <cmath>
#include <random>

using namespace spider;
using namespace spider::nn;

namespace {

template <class S>
Maps<S> random_maps(std::mt19937_64& rng, int c, int b, int h, int w) {
  std::normal_distribution<double> n(0.0, 1.0);
  Maps<S> x(c, b, h, w);
  for (Eigen::Index k = 0; k < x.data.size(); ++k) x.data.data()[k] = static_cast<S>(n(rng));
  return x;
}

Mat<double> random_mat(std::mt19937_64& rng, int r, int c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat<double> m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

double mae_loss(const Mat<double>& out, const Mat<double>& target) {
  return (out - target).cwiseAbs().mean();
}

Mat<double> mae_grad(const Mat<double>& out, const Mat<double>& target) {
  return (out - target).unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }) /
         static_cast<double>(out.size());
}

double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-7});
  return std::abs(a - b) / scale;
}

// Central differences on `samples` random scalar parameters.
template <class Loss>
double worst_gradient_error(ParamSet<double>& params, const Grads<double>& analytic, Loss loss, int samples,
                            std::mt19937_64& rng) {
  double worst = 0.0;
  const double h = 1e-5;
  for (int s = 0; s < samples; ++s) {
    const int p = static_cast<int>(rng() % static_cast<unsigned>(params.size()));
    auto& m = params[p];
    const Eigen::Index k = static_cast<Eigen::Index>(rng() % static_cast<unsigned long>(m.size()));
    const double keep = m.data()[k];
    m.data()[k] = keep + h;
    const double up = loss();
    m.data()[k] = keep - h;
    const double down = loss();
    m.data()[k] = keep;
    const double numeric = (up - down) / (2 * h);
    const double an = analytic[static_cast<std::size_t>(p)].data()[k];
    worst = std::max(worst, relative_error(numeric, an));
  }
  return worst;
}

ConvNetConfig toy_config(int time_features) {
  ConvNetConfig c;
  c.window_frames = 3;
  c.n_feature_layers = 3;
  c.channels = {2, 3, 3, 4};
  c.time_features = time_features;
  return c;
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(1);
  const auto x = random_maps<double>(rng, 2, 2, 5, 4);
  const ConvSpec spec{2, 3, 3, 1, 1};
  const auto w = random_mat(rng, 3, 18);
  const auto b = random_mat(rng, 3, 1);
  const auto y = conv2d(x, w, b, spec);
  CHECK(y.h == 5);
  CHECK(y.w == 4);
  for (int n = 0; n < 2; ++n)
    for (int oy = 0; oy < 5; ++oy)
      for (int ox = 0; ox < 4; ++ox)
        for (int o = 0; o < 3; ++o) {
          double acc = b(o, 0);
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              for (int c = 0; c < 2; ++c) {
                const int iy = oy - 1 + ky, ix = ox - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
                acc += w(o, (ky * 3 + kx) * 2 + c) * x.data(c, x.pixel(n, iy, ix));
              }
          CHECK(y.data(o, y.pixel(n, oy, ox)) == doctest::Approx(acc));
        }
}

TEST_CASE("sum pooling and its adjoint") {
  std::mt19937_64 rng(2);
  const auto x = random_maps<double>(rng, 2, 1, 5, 3);
  const auto y = sum_pool(x, 2);
  CHECK(y.h == 3);
  CHECK(y.w == 2);
  CHECK(y.data(1, y.pixel(0, 2, 1)) == doctest::Approx(x.data(1, x.pixel(0, 4, 2))));
  CHECK(y.data.sum() == doctest::Approx(x.data.sum()));
  // <pool(x), d> == <x, pool^T(d)>
  const auto d = random_maps<double>(rng, 2, 1, 3, 2);
  const auto back = sum_pool_backward(d, 2, 5, 3);
  CHECK((y.data.array() * d.data.array()).sum() == doctest::Approx((x.data.array() * back.data.array()).sum()));
}

TEST_CASE("convnet gradient check on a 4x4 toy config") {
  for (int tf : {0, 3}) {
    std::mt19937_64 rng(42 + tf);
    ConvNet<double> net(toy_config(tf), 7);
    const auto input = random_maps<double>(rng, 3, 2, 4, 4);
    const Mat<double> time = random_mat(rng, 3, 2);
    const Mat<double>* tp = tf ? &time : nullptr;
    const Mat<double> target = random_mat(rng, 1, 32);

    ConvNet<double>::Trace trace;
    const auto out = net.forward(input, tp, &trace);
    CHECK(out.channels() == 1);
    CHECK(out.h == 4);
    CHECK(out.w == 4);
    Grads<double> g = net.params().zeros_like();
    Maps<double> d_out = out;
    d_out.data = mae_grad(out.data, target);
    net.backward(trace, d_out, g);

    auto loss = [&] { return mae_loss(net.forward(input, tp).data, target); };
    const double worst = worst_gradient_error(net.params(), g, loss, 100, rng);
    MESSAGE("time features " << tf << ": worst relative gradient error " << worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("convnet gradient check with odd sizes, partial temporal kernel and pool 3") {
  std::mt19937_64 rng(5);
  ConvNetConfig c = toy_config(0);
  c.window_frames = 4;
  c.temporal_kernel = 2;
  c.pool_factor = 3;
  c.n_feature_layers = 5;
  ConvNet<double> net(c, 3);
  const auto input = random_maps<double>(rng, 4, 1, 5, 7);
  const Mat<double> target = random_mat(rng, 1, 35);
  ConvNet<double>::Trace trace;
  const auto out = net.forward(input, nullptr, &trace);
  CHECK(out.h == 5);
  CHECK(out.w == 7);
  Grads<double> g = net.params().zeros_like();
  Maps<double> d_out = out;
  d_out.data = mae_grad(out.data, target);
  net.backward(trace, d_out, g);
  auto loss = [&] { return mae_loss(net.forward(input, nullptr).data, target); };
  CHECK(worst_gradient_error(net.params(), g, loss, 100, rng) < 1e-4);
}

TEST_CASE("agent net gradient check") {
  std::mt19937_64 rng(9);
  AgentNetConfig c;
  c.conv1 = 2;
  c.conv2 = 3;
  c.reduce = 2;
  c.hidden = 5;
  c.prev_actions_len = 4;
  AgentNet<double> net(c, 6, 5, 11);
  const auto frame = random_maps<double>(rng, 1, 3, 6, 5);
  const Mat<double> time = random_mat(rng, 3, 3), prev = random_mat(rng, 4, 3);
  const Mat<double> target = random_mat(rng, 2, 3);
  AgentNet<double>::Trace trace;
  const Mat<double> out = net.forward(frame, time, prev, &trace);
  CHECK(out.rows() == 2);
  CHECK(out.cols() == 3);
  Grads<double> g = net.params().zeros_like();
  net.backward(trace, Mat<double>(2.0 * (out - target)), g);
  auto loss = [&] { return (net.forward(frame, time, prev) - target).squaredNorm(); };
  CHECK(worst_gradient_error(net.params(), g, loss, 100, rng) < 1e-4);
}

TEST_CASE("float and double nets built from one seed agree") {
  ConvNet<float> f(toy_config(0), 5);
  ConvNet<double> d(toy_config(0), 5);
  REQUIRE(f.params().size() == d.params().size());
  for (int i = 0; i < f.params().size(); ++i)
    CHECK((f.params()[i].cast<double>() - d.params()[i]).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(ConvNet<float>(ConvNetConfig{}, 1).params().scalar_count() ==
        ConvNet<float>(ConvNetConfig{}, 2).params().scalar_count());
  CHECK(ConvNet<float>(ConvNetConfig{}, 1).params().checksum() ==
        ConvNet<float>(ConvNetConfig{}, 1).params().checksum());
  CHECK(ConvNet<float>(ConvNetConfig{}, 1).params().checksum() !=
        ConvNet<float>(ConvNetConfig{}, 2).params().checksum());
}

TEST_CASE("global skip is live") {
  std::mt19937_64 rng(3);
  ConvNet<double> net(toy_config(0), 1);
  for (int idx : net.feature_block_params()) net.params()[idx].setZero();
  const auto input = random_maps<double>(rng, 3, 2, 4, 4);
  ConvNet<double>::Trace trace;
  const auto out = net.forward(input, nullptr, &trace);
  const int pw = net.projection_weight();
  const auto projected = conv2d(trace.pooled, net.params()[pw], net.params()[pw + 1], ConvSpec{2, 3, 1, 1, 0});
  CHECK((trace.stage_out.data - projected.data).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(projected.data.cwiseAbs().maxCoeff() > 0.0);

  // Removing the projection as well leaves a stage output that ignores the input.
  net.params()[pw].setZero();
  const auto other = random_maps<double>(rng, 3, 2, 4, 4);
  ConvNet<double>::Trace t1, t2;
  net.forward(input, nullptr, &t1);
  net.forward(other, nullptr, &t2);
  CHECK((t1.stage_out.data - t2.stage_out.data).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("config validation") {
  ConvNetConfig c;
  c.channels = {1, 2, 3};
  CHECK_THROWS_AS(ConvNet<float>(c, 1), Error);
  c = ConvNetConfig{};
  c.window_frames = 1;
  CHECK_THROWS_AS(ConvNet<float>(c, 1), Error);
  c = ConvNetConfig{};
  c.lrelu_slope = 1.0;
  CHECK_THROWS_AS(ConvNet<float>(c, 1), Error);
  c = ConvNetConfig{};
  c.temporal_kernel = 9;
  CHECK_THROWS_AS(ConvNet<float>(c, 1), Error);
}

TEST_CASE("ablation depths construct and keep the output shape") {
  std::mt19937_64 rng(1);
  const auto input = random_maps<float>(rng, 7, 1, 20, 20);
  for (int n : {5, 10, 15, 20, 25, 30}) {
    ConvNetConfig c;
    c.n_feature_layers = n;
    ConvNet<float> net(c, 1);
    const auto out = net.forward(input, nullptr);
    CHECK(out.h == 20);
    CHECK(out.w == 20);
    CHECK(out.data.allFinite());
  }
}

TEST_CASE("flop accounting") {
  CHECK(count_flops({}) == 0);
  CHECK(count_flops({{"conv2d", 16, 1, 9}}) == 288);
  CHECK(count_flops({{"lrelu", 100, 0, 0}, {"sum_pool", 10, 0, 0}, {"add", 4, 0, 0}}) == 0);
  CHECK(count_flops({{"linear", 4, 3, 1}}) == 24);
  try {
    count_flops({{"attention", 1, 1, 1}});
    FAIL("expected an accounting error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::accounting);
  }

  std::vector<double> xs, ys;
  for (int n : {5, 10, 15, 20, 25, 30}) {
    ConvNetConfig c;
    c.n_feature_layers = n;
    xs.push_back(n);
    ys.push_back(static_cast<double>(count_flops(ConvNet<float>(c, 1).describe(20, 20))));
  }
  for (std::size_t k = 1; k < ys.size(); ++k) CHECK(ys[k] > ys[k - 1]);
  const Eigen::Map<const Eigen::VectorXd> x(xs.data(), 6), y(ys.data(), 6);
  const double mx = x.mean(), my = y.mean();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double sxx = (x.array() - mx).square().sum(), syy = (y.array() - my).square().sum();
  CHECK(sxy * sxy / (sxx * syy) > 0.99);
}

TEST_CASE("adam moves against the gradient") {
  ParamSet<double> p;
  p.add("w", 2, 1);
  p[0] << 1.0, -1.0;
  Adam<double> opt(0.1);
  Grads<double> g{Mat<double>(2, 1)};
  g[0] << 2.0, -3.0;
  opt.step(p, g);
  CHECK(p[0](0, 0) == doctest::Approx(0.9));
  CHECK(p[0](1, 0) == doctest::Approx(-0.9));
}
