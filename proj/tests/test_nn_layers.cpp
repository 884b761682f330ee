#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "ptychoforge/nn/layers.hpp"
#include "ptychoforge/numerics.hpp"

using namespace ptychoforge;
using namespace ptychoforge::nn;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.next_normal();
  return v;
}

FeatureMap<double> random_map(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  FeatureMap<double> m(c, h, w);
  m.data = random_vec(c * h * w, seed);
  return m;
}

// Direct zero-padded cross-correlation, kernel layout [out][in][ky][kx].
FeatureMap<double> conv_oracle(const FeatureMap<double>& in, const ConvShape& s, const std::vector<double>& k,
                               const std::vector<double>& b) {
  FeatureMap<double> out(s.out_channels, in.height, in.width);
  const long half = static_cast<long>(s.kernel / 2);
  for (std::size_t o = 0; o < s.out_channels; ++o)
    for (std::size_t y = 0; y < in.height; ++y)
      for (std::size_t x = 0; x < in.width; ++x) {
        double acc = b[o];
        for (std::size_t i = 0; i < s.in_channels; ++i)
          for (std::size_t ky = 0; ky < s.kernel; ++ky)
            for (std::size_t kx = 0; kx < s.kernel; ++kx) {
              const long yy = static_cast<long>(y + ky) - half;
              const long xx = static_cast<long>(x + kx) - half;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.height) || xx >= static_cast<long>(in.width)) continue;
              acc += k[((o * s.in_channels + i) * s.kernel + ky) * s.kernel + kx] * in.at(i, yy, xx);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); }

// Central difference of f with respect to x[i], step 1e-5.
double fd(std::vector<double>& x, std::size_t i, const std::function<double()>& f) {
  const double h = 1e-5;
  const double keep = x[i];
  x[i] = keep + h;
  const double up = f();
  x[i] = keep - h;
  const double down = f();
  x[i] = keep;
  return (up - down) / (2.0 * h);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d forward: identity, padding arithmetic, bias") {
  std::vector<double> col;
  const auto in = random_map(1, 5, 6, 1);
  FeatureMap<double> out;
  const std::vector<double> one{1.0};
  const std::vector<double> zero{0.0};
  conv2d_forward<double>(in, ConvShape{1, 1, 1}, one, zero, out, col);
  CHECK(out.data == in.data);

  FeatureMap<double> ones(1, 4, 4, 1.0);
  const std::vector<double> k9(9, 1.0);
  conv2d_forward<double>(ones, ConvShape{1, 1, 3}, k9, zero, out, col);
  CHECK(out.at(0, 1, 1) == 9.0);
  CHECK(out.at(0, 0, 0) == 4.0);
  CHECK(out.at(0, 0, 2) == 6.0);

  const std::vector<double> zk(9, 0.0);
  const std::vector<double> bias{2.5};
  conv2d_forward<double>(in, ConvShape{1, 1, 3}, zk, bias, out, col);
  for (double v : out.data) CHECK(v == 2.5);
}

TEST_CASE("conv2d forward matches the direct loop") {
  for (std::size_t k : {1u, 3u, 5u}) {
    const ConvShape s{3, 4, k};
    const auto in = random_map(3, 7, 5, 2 + k);
    const auto kern = random_vec(s.kernel_elems(), 3);
    const auto bias = random_vec(4, 4);
    FeatureMap<double> out;
    std::vector<double> col;
    conv2d_forward<double>(in, s, kern, bias, out, col);
    const auto want = conv_oracle(in, s, kern, bias);
    REQUIRE(out.data.size() == want.data.size());
    for (std::size_t i = 0; i < want.data.size(); ++i) CHECK(out.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d backward matches finite differences") {
  for (std::size_t k : {1u, 3u}) {
    const ConvShape s{2, 3, k};
    auto in = random_map(2, 5, 4, 10 + k);
    auto kern = random_vec(s.kernel_elems(), 11);
    auto bias = random_vec(3, 12);
    const auto w = random_vec(3 * 5 * 4, 13);
    auto loss = [&] { return dot(conv_oracle(in, s, kern, bias).data, w); };

    FeatureMap<double> grad_out(3, 5, 4);
    grad_out.data = w;
    const auto g = conv2d_backward<double>(grad_out, in, s, kern);
    double worst = 0.0;
    for (std::size_t i = 0; i < kern.size(); ++i) worst = std::max(worst, rel_err(g.kernel[i], fd(kern, i, loss)));
    for (std::size_t i = 0; i < bias.size(); ++i) worst = std::max(worst, rel_err(g.bias[i], fd(bias, i, loss)));
    for (std::size_t i = 0; i < in.data.size(); ++i) worst = std::max(worst, rel_err(g.input.data[i], fd(in.data, i, loss)));
    CAPTURE(k);
    CHECK(worst < 1e-4);

    for (std::size_t o = 0; o < 3; ++o) {
      double sum = 0.0;
      for (std::size_t p = 0; p < 20; ++p) sum += w[o * 20 + p];
      CHECK(g.bias[o] == doctest::Approx(sum));
    }
    FeatureMap<double> zero(3, 5, 4, 0.0);
    const auto gz = conv2d_backward<double>(zero, in, s, kern);
    for (double v : gz.kernel) CHECK(v == 0.0);
    for (double v : gz.input.data) CHECK(v == 0.0);
  }
}

TEST_CASE("im2col and col2im are adjoint") {
  const auto x = random_map(2, 4, 5, 20);
  std::vector<double> col;
  im2col(x, 3, col);
  const auto y = random_vec(col.size(), 21);
  FeatureMap<double> back(2, 4, 5, 0.0);
  col2im<double>(y, 3, back);
  CHECK(dot(col, y) == doctest::Approx(dot(x.data, back.data)).epsilon(1e-12));
}

TEST_CASE("maxpool2 forward, tie rule and backward") {
  FeatureMap<double> in(1, 2, 2);
  in.data = {1, 2, 3, 4};
  FeatureMap<double> out;
  std::vector<std::uint32_t> arg;
  maxpool2(in, out, arg);
  CHECK(out.data == std::vector<double>{4});
  FeatureMap<double> g(1, 1, 1, 1.0);
  FeatureMap<double> gi;
  maxpool2_backward(g, arg, 2, 2, gi);
  CHECK(gi.data == std::vector<double>{0, 0, 0, 1});

  FeatureMap<double> flat(1, 2, 2, 7.0);
  maxpool2(flat, out, arg);
  maxpool2_backward(g, arg, 2, 2, gi);
  CHECK(gi.data == std::vector<double>{1, 0, 0, 0});

  FeatureMap<double> big(3, 64, 64, 1.0);
  maxpool2(big, out, arg);
  CHECK(out.channels == 3);
  CHECK(out.height == 32);
  CHECK(out.width == 32);
}

TEST_CASE("upsample2 and its adjoint") {
  FeatureMap<double> in(1, 1, 2);
  in.data = {3, 5};
  FeatureMap<double> out;
  upsample2(in, out);
  CHECK(out.height == 2);
  CHECK(out.width == 4);
  CHECK(out.data == std::vector<double>{3, 3, 5, 5, 3, 3, 5, 5});

  FeatureMap<double> c(2, 8, 8, 1.5);
  FeatureMap<double> pooled;
  std::vector<std::uint32_t> arg;
  maxpool2(c, pooled, arg);
  upsample2(pooled, out);
  CHECK(out.data == c.data);

  FeatureMap<double> g(2, 8, 8, 1.0);
  FeatureMap<double> gi;
  upsample2_backward(g, gi);
  for (double v : gi.data) CHECK(v == 4.0);

  const auto x = random_map(2, 3, 4, 30);
  const auto y = random_map(2, 6, 8, 31);
  upsample2(x, out);
  upsample2_backward(y, gi);
  CHECK(dot(out.data, y.data) == doctest::Approx(dot(x.data, gi.data)).epsilon(1e-12));
}

TEST_CASE("pooling and ReLU backward match finite differences") {
  auto x = random_map(2, 4, 6, 40);
  const auto w = random_vec(2 * 2 * 3, 41);
  auto loss = [&] {
    FeatureMap<double> r = x;
    relu_inplace(r);
    FeatureMap<double> p;
    std::vector<std::uint32_t> a;
    maxpool2(r, p, a);
    return dot(p.data, w);
  };
  FeatureMap<double> r = x;
  relu_inplace(r);
  FeatureMap<double> p;
  std::vector<std::uint32_t> a;
  maxpool2(r, p, a);
  FeatureMap<double> g(2, 2, 3);
  g.data = w;
  FeatureMap<double> gi;
  maxpool2_backward(g, a, 4, 6, gi);
  relu_backward_inplace(gi, r);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) worst = std::max(worst, std::abs(gi.data[i] - fd(x.data, i, loss)));
  CHECK(worst < 1e-6);
}
