#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tbc/nn.hpp"

using namespace tbc;
using namespace tbc::nn;
using tbc::testing::dot;
using tbc::testing::grad_check;
using tbc::testing::random_tensor;

namespace {

// Six nested loops, no im2col.
Tensor naive_conv(const ConvLayer& l, const Tensor& x) {
  const long ci = long(x.extent(0)), h = long(x.extent(1)), w = long(x.extent(2)), co = long(l.out_channels());
  Tensor y({std::size_t(co), std::size_t(h), std::size_t(w)});
  for (long o = 0; o < co; ++o)
    for (long yy = 0; yy < h; ++yy)
      for (long xx = 0; xx < w; ++xx) {
        double s = l.bias ? (*l.bias)[o] : 0.0;
        for (long c = 0; c < ci; ++c)
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              long sy = yy + dy, sx = xx + dx;
              if (l.padding == Padding::replicate) {
                sy = std::clamp(sy, 0L, h - 1);
                sx = std::clamp(sx, 0L, w - 1);
              } else if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
                continue;
              }
              s += double(l.weights[((o * ci + c) * 3 + dy + 1) * 3 + dx + 1]) * x.at(c, sy, sx);
            }
        y.at(o, yy, xx) = real(s);
      }
  return y;
}

}  // namespace

TEST_CASE("conv identity kernel with replicate padding") {
  Rng rng(1);
  ConvLayer l{Tensor({1, 1, 3, 3}), std::nullopt, Padding::replicate};
  l.weights[4] = 1;
  const auto x = random_tensor({1, 5, 6}, rng);
  CHECK(conv2d_forward(l, x) == x);
}

TEST_CASE("conv counting kernel with zero padding") {
  ConvLayer l{Tensor({1, 1, 3, 3}, 1.0f), std::nullopt, Padding::zero};
  const auto y = conv2d_forward(l, Tensor({1, 3, 3}, 1.0f));
  CHECK(y.at(0, 1, 1) == 9);
  CHECK(y.at(0, 0, 0) == 4);
  CHECK(y.at(0, 2, 2) == 4);
  CHECK(y.at(0, 0, 1) == 6);
}

TEST_CASE("conv matches the nested-loop oracle") {
  Rng rng(2);
  for (auto pad : {Padding::zero, Padding::replicate}) {
    for (bool bias : {false, true}) {
      const auto l = make_conv(2, 4, pad, bias, rng);
      const auto x = random_tensor({2, 8, 8}, rng);
      const auto y = conv2d_forward(l, x), ref = naive_conv(l, x);
      for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-5);
    }
  }
  const auto l = make_conv(3, 2, Padding::zero, false, rng);
  CHECK_THROWS_AS(conv2d_forward(l, Tensor({2, 4, 4})), ShapeError);
  CHECK(conv2d_ops(l, 10, 12) == 9ULL * 10 * 12 * 3 * 2);
}

TEST_CASE("conv init is He-uniform") {
  Rng rng(3);
  const auto l = make_conv(4, 8, Padding::replicate, true, rng);
  const double bound = std::sqrt(6.0 / 36.0);
  double mx = 0;
  for (real v : l.weights.values()) mx = std::max(mx, std::abs(double(v)));
  CHECK(mx <= bound);
  CHECK(mx > 0.9 * bound);
  for (real v : l.bias->values()) CHECK(v == 0);
  CHECK(l.parameter_count() == 4 * 8 * 9 + 8);
}

TEST_CASE("conv gradients") {
  Rng rng(4);
  for (auto pad : {Padding::zero, Padding::replicate}) {
    auto l = make_conv(2, 3, pad, true, rng);
    const auto x = random_tensor({2, 5, 4}, rng);
    const auto r = random_tensor({3, 5, 4}, rng);
    const auto g = conv2d_backward(l, x, r);
    CHECK(grad_check([&](const Tensor& xi) { return dot(r, conv2d_forward(l, xi)); }, x, g.d_input) < 1e-3);
    CHECK(grad_check(
              [&](const Tensor& w) {
                auto m = l;
                m.weights = w;
                return dot(r, conv2d_forward(m, x));
              },
              l.weights, g.d_weights) < 1e-3);
    CHECK(grad_check(
              [&](const Tensor& b) {
                auto m = l;
                m.bias = b;
                return dot(r, conv2d_forward(m, x));
              },
              *l.bias, *g.d_bias) < 1e-3);
    const auto no_params = conv2d_backward(l, x, r, false);
    CHECK(no_params.d_input == g.d_input);
  }
}

TEST_CASE("maxpool2") {
  const auto p = maxpool2(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  CHECK(p.out.values() == std::vector<real>{4});
  CHECK(maxpool2(Tensor({2, 4, 6}, 0.7f)).out == Tensor({2, 2, 3}, 0.7f));
  CHECK_THROWS_AS(maxpool2(Tensor({1, 3, 4})), ShapeError);

  Rng rng(5);
  const auto x = random_tensor({3, 16, 16}, rng);
  const auto m = maxpool2(x);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t xx = 0; xx < 8; ++xx) {
        const real ref = std::max({x.at(c, 2 * y, 2 * xx), x.at(c, 2 * y, 2 * xx + 1), x.at(c, 2 * y + 1, 2 * xx),
                                   x.at(c, 2 * y + 1, 2 * xx + 1)});
        CHECK(m.out.at(c, y, xx) == ref);
      }
  const auto r = random_tensor({3, 8, 8}, rng);
  const auto g = maxpool2_backward(x.shape(), m.argmax, r);
  CHECK(grad_check([&](const Tensor& xi) { return dot(r, maxpool2(xi).out); }, x, g, 1e-4) < 1e-3);
}

TEST_CASE("upsample_nearest2") {
  CHECK(upsample_nearest2(Tensor({1, 1, 1}, {5})).values() == std::vector<real>{5, 5, 5, 5});
  Rng rng(6);
  const auto x = random_tensor({2, 3, 4}, rng);
  const auto r = random_tensor({2, 6, 8}, rng);
  CHECK(grad_check([&](const Tensor& xi) { return dot(r, upsample_nearest2(xi)); }, x, upsample_nearest2_backward(r)) <
        1e-3);
}

TEST_CASE("avgpool") {
  CHECK(avgpool(Tensor({16, 16, 16}), 4, 4).shape() == Shape{16, 4, 4});
  CHECK(avgpool(Tensor({2, 8, 8}, 0.3f), 4, 4) == Tensor({2, 2, 2}, 0.3f));
  CHECK_THROWS_AS(avgpool(Tensor({1, 6, 6}), 4, 4), ShapeError);
  Rng rng(7);
  const auto x = random_tensor({2, 8, 8}, rng);
  const auto r = random_tensor({2, 2, 2}, rng);
  CHECK(grad_check([&](const Tensor& xi) { return dot(r, avgpool(xi, 4, 4)); }, x,
                   avgpool_backward(x.shape(), 4, 4, r)) < 1e-3);
}

TEST_CASE("fully connected") {
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1;
  const Tensor x({3}, {0.5, -1, 2});
  CHECK(fully_connected(eye, Tensor({3}), x) == x);
  Rng rng(8);
  const auto d = make_dense(6, 4, rng);
  const auto xi = random_tensor({6}, rng);
  const auto r = random_tensor({4}, rng);
  const auto g = fully_connected_backward(d.weights, xi, r);
  CHECK(grad_check([&](const Tensor& t) { return dot(r, fully_connected(d.weights, d.bias, t)); }, xi, g.d_input) < 1e-3);
  CHECK(grad_check([&](const Tensor& w) { return dot(r, fully_connected(w, d.bias, xi)); }, d.weights, g.d_weights) <
        1e-3);
  CHECK(grad_check([&](const Tensor& b) { return dot(r, fully_connected(d.weights, b, xi)); }, d.bias, g.d_bias) < 1e-3);
  CHECK_THROWS_AS(fully_connected(d.weights, d.bias, Tensor({5})), ShapeError);
}

TEST_CASE("relu and softmax") {
  CHECK(relu(Tensor({2}, {-1, 2})).values() == std::vector<real>{0, 2});
  Tensor t({2}, {-1, 2});
  relu_inplace(t);
  CHECK(t.values() == std::vector<real>{0, 2});
  CHECK(relu_backward(Tensor({3}, {-1, 2, 0}), Tensor({3}, 1.0f)).values() == std::vector<real>{0, 1, 0});
  const auto flat = softmax(Tensor({4}));
  for (real p : flat.values()) CHECK(p == doctest::Approx(0.25));
  const auto big = softmax(Tensor({2}, {1000, 0}));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(big[1]));

  Rng rng(9);
  const auto z = random_tensor({5}, rng, -2, 2);
  const auto r = random_tensor({5}, rng);
  CHECK(grad_check([&](const Tensor& zi) { return dot(r, softmax(zi)); }, z, softmax_backward(softmax(z), r)) < 1e-3);
}

TEST_CASE("cross entropy") {
  CHECK(softmax_cross_entropy(Tensor({4}), 2).loss == doctest::Approx(std::log(4.0)));
  CHECK(softmax_cross_entropy(Tensor({4}, {50, 0, 0, 0}), 0).loss < 1e-12);
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor({4}), 4), std::out_of_range);
  Rng rng(10);
  const auto z = random_tensor({4}, rng, -2, 2);
  const auto ce = softmax_cross_entropy(z, 1);
  CHECK(grad_check([&](const Tensor& zi) { return softmax_cross_entropy(zi, 1).loss; }, z, ce.d_logits) < 1e-3);
}
