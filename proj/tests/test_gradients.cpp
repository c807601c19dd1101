// Finite-difference checks of the composite networks. Built against the
// 64-bit library: in 32-bit, a step large enough to beat rounding crosses
// ReLU and max-pool kinks somewhere in the net.
#include <doctest.h>

#include "helpers.hpp"
#include "tbc/scm.hpp"
#include "tbc/tem.hpp"

using namespace tbc;
using tbc::testing::dot;
using tbc::testing::grad_check;
using tbc::testing::random_tensor;

namespace {
constexpr double kStep = 1e-6;
}

static_assert(sizeof(real) == 8);

TEST_CASE("extractor backward against finite differences") {
  Rng rng(7);
  const auto net = build_tem({2, 2, 8, 8}, rng);
  const auto x = random_tensor({1, 8, 8}, rng, 0, 1);
  const auto r = random_tensor({1, 8, 8}, rng);
  TemCache cache;
  tem_forward(net, x, &cache);
  const auto g = tem_backward(net, cache, r);
  CHECK(grad_check([&](const Tensor& xi) { return dot(r, tem_forward(net, xi)); }, x, g.d_input, kStep) < kStep);
  const auto ls = net.layers();
  REQUIRE(g.d_weights.size() == ls.size());
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const double err = grad_check(
        [&](const Tensor& w) {
          auto m = net;
          m.layers()[i]->weights = w;
          return dot(r, tem_forward(m, x));
        },
        ls[i]->weights, g.d_weights[i], kStep);
    CHECK_MESSAGE(err < 1e-3, "layer " << i);
  }
}

TEST_CASE("classifier input and parameter gradients") {
  Rng rng(4);
  const auto net = build_scm(4, 32, 32, rng);
  const auto x = random_tensor({1, 32, 32}, rng, 0, 1);
  const auto res = scm_forward_backward(net, x, 1, true);
  const auto loss = [&](const ScmNet& n, const Tensor& xi) { return scm_forward_backward(n, xi, 1, false).loss; };
  CHECK(grad_check([&](const Tensor& xi) { return loss(net, xi); }, x, res.d_input, kStep) < kStep);
  CHECK(scm_forward_backward(net, x, 1, false).d_params.empty());

  const auto params = net.parameters();
  REQUIRE(res.d_params.size() == params.size());
  // fc weights, fc bias and the last conv bias are small enough to difference in full.
  for (std::size_t i : {params.size() - 2, params.size() - 1, params.size() - 3}) {
    const double err = grad_check(
        [&](const Tensor& p) {
          auto m = net;
          *m.parameters()[i] = p;
          return loss(m, x);
        },
        *params[i], res.d_params[i], kStep);
    CHECK_MESSAGE(err < 1e-3, "parameter " << i);
  }
}

TEST_CASE("classifier loss reaches the extractor weights") {
  Rng rng(5);
  const auto tem = build_tem({2, 2, 32, 32}, rng);
  const auto scm = build_scm(4, 32, 32, rng);
  const auto x = random_tensor({1, 32, 32}, rng, 0, 1);
  TemCache cache;
  const auto s = scm_forward_backward(scm, tem_forward(tem, x, &cache), 3, false);
  const auto g = tem_backward(tem, cache, s.d_input);
  const auto ls = tem.layers();
  for (std::size_t i = 0; i < ls.size(); i += 2) {
    const double err = grad_check(
        [&](const Tensor& w) {
          auto m = tem;
          m.layers()[i]->weights = w;
          return scm_forward_backward(scm, tem_forward(m, x), 3, false).loss;
        },
        ls[i]->weights, g.d_weights[i], kStep);
    CHECK_MESSAGE(err < 1e-6, "layer " << i);
  }
}
