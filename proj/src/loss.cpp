#include "tbc/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tbc {

void LossBreakdown::finalize() {
  l_t = l_l1 + l_ssim;
  total = l_t + l_b + lambda * l_c;
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  l_l1 += o.l_l1;
  l_ssim += o.l_ssim;
  l_t += o.l_t;
  l_b += o.l_b;
  l_c += o.l_c;
  total += o.total;
  return *this;
}

LossBreakdown& LossBreakdown::operator/=(double n) {
  l_l1 /= n;
  l_ssim /= n;
  l_t /= n;
  l_b /= n;
  l_c /= n;
  total /= n;
  return *this;
}

namespace {

struct Plane {
  std::size_t h = 0, w = 0;
};

Plane plane_of(const Tensor& t) {
  if (t.rank() == 3 && t.extent(0) == 1) return {t.extent(1), t.extent(2)};
  if (t.rank() == 2) return {t.extent(0), t.extent(1)};
  throw ShapeError("expected a [1,H,W] or [H,W] image, got " + shape_string(t.shape()));
}

Plane check_pair(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw ShapeError("shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  return plane_of(a);
}

/// Summed-area table with a zero first row and column.
class Integral {
public:
  Integral(std::size_t h, std::size_t w) : w1_(w + 1), s_((h + 1) * (w + 1), 0.0) {}

  template <class F>
  void build(std::size_t h, std::size_t w, F value) {
    for (std::size_t i = 0; i < h; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < w; ++j) {
        row += value(i, j);
        s_[(i + 1) * w1_ + j + 1] = s_[i * w1_ + j + 1] + row;
      }
    }
  }

  /// Sum over rows [i0, i1) and columns [j0, j1).
  double box(std::size_t i0, std::size_t j0, std::size_t i1, std::size_t j1) const {
    return s_[i1 * w1_ + j1] - s_[i0 * w1_ + j1] - s_[i1 * w1_ + j0] + s_[i0 * w1_ + j0];
  }

private:
  std::size_t w1_;
  std::vector<double> s_;
};

ValueGrad ssim_impl(const Tensor& x, const Tensor& y, bool want_grad) {
  const Plane p = check_pair(x, y);
  constexpr std::size_t k = kSsimWindow;
  if (p.h < k || p.w < k) {
    throw ShapeError("SSIM needs extents of at least " + std::to_string(k) + ", got " + std::to_string(p.w) + "x" +
                     std::to_string(p.h));
  }
  const std::size_t w = p.w;
  auto X = [&](std::size_t i, std::size_t j) { return static_cast<double>(x[i * w + j]); };
  auto Y = [&](std::size_t i, std::size_t j) { return static_cast<double>(y[i * w + j]); };
  Integral sx(p.h, w), sy(p.h, w), sxx(p.h, w), syy(p.h, w), sxy(p.h, w);
  sx.build(p.h, w, X);
  sy.build(p.h, w, Y);
  sxx.build(p.h, w, [&](auto i, auto j) { return X(i, j) * X(i, j); });
  syy.build(p.h, w, [&](auto i, auto j) { return Y(i, j) * Y(i, j); });
  sxy.build(p.h, w, [&](auto i, auto j) { return X(i, j) * Y(i, j); });

  const std::size_t oh = p.h - k + 1, ow = w - k + 1;
  const double n = static_cast<double>(k * k);
  const double n_win = static_cast<double>(oh * ow);
  std::vector<double> alpha, beta, gamma;
  if (want_grad) {
    alpha.resize(oh * ow);
    beta.resize(oh * ow);
    gamma.resize(oh * ow);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      const double mx = sx.box(i, j, i + k, j + k) / n;
      const double my = sy.box(i, j, i + k, j + k) / n;
      const double vx = sxx.box(i, j, i + k, j + k) / n - mx * mx;
      const double vy = syy.box(i, j, i + k, j + k) / n - my * my;
      const double cxy = sxy.box(i, j, i + k, j + k) / n - mx * my;
      const double a = 2.0 * mx * my + kSsimC1;
      const double b = 2.0 * cxy + kSsimC2;
      const double c = mx * mx + my * my + kSsimC1;
      const double d = vx + vy + kSsimC2;
      const double s = (a * b) / (c * d);
      total += s;
      if (want_grad) {
        // dS/dx_p = alpha + beta * y_p + gamma * x_p for every p in the window.
        const double f = 2.0 / n * s;
        const std::size_t q = i * ow + j;
        alpha[q] = f * (my / a - my / b - mx / c + mx / d);
        beta[q] = f / b;
        gamma[q] = -f / d;
      }
    }
  }
  ValueGrad out;
  out.value = total / n_win;
  if (!want_grad) return out;

  // Each pixel collects the coefficients of every window covering it.
  Integral ia(oh, ow), ib(oh, ow), ig(oh, ow);
  ia.build(oh, ow, [&](auto i, auto j) { return alpha[i * ow + j]; });
  ib.build(oh, ow, [&](auto i, auto j) { return beta[i * ow + j]; });
  ig.build(oh, ow, [&](auto i, auto j) { return gamma[i * ow + j]; });
  out.grad = Tensor(x.shape());
  for (std::size_t i = 0; i < p.h; ++i) {
    const std::size_t i0 = i >= k - 1 ? i - (k - 1) : 0, i1 = std::min(i + 1, oh);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t j0 = j >= k - 1 ? j - (k - 1) : 0, j1 = std::min(j + 1, ow);
      const double g = ia.box(i0, j0, i1, j1) + Y(i, j) * ib.box(i0, j0, i1, j1) + X(i, j) * ig.box(i0, j0, i1, j1);
      out.grad[i * w + j] = static_cast<real>(g / n_win);
    }
  }
  return out;
}

inline double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

double ssim(const Tensor& x, const Tensor& y) { return ssim_impl(x, y, false).value; }

double ssim(const GrayImage& x, const GrayImage& y) {
  if (!x.same_extents(y)) throw ShapeError("ssim: image extents differ");
  return ssim(to_tensor(x), to_tensor(y));
}

ValueGrad ssim_with_grad(const Tensor& x, const Tensor& y) { return ssim_impl(x, y, true); }

ValueGrad loss_l1(const Tensor& pred, const Tensor& target) {
  check_pair(pred, target);
  const double n = static_cast<double>(pred.size());
  ValueGrad out{0.0, Tensor(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    out.value += std::abs(d);
    out.grad[i] = static_cast<real>(sign(d) / n);
  }
  out.value /= n;
  return out;
}

TargetLoss loss_t(const Tensor& pred, const Tensor& target) {
  auto l1 = loss_l1(pred, target);
  auto s = ssim_with_grad(pred, target);
  TargetLoss out{l1.value, 1.0 - s.value, std::move(l1.grad)};
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] -= s.grad[i];
  return out;
}

ValueGrad loss_b(const Tensor& pred) {
  const double n = static_cast<double>(pred.size());
  ValueGrad out{0.0, Tensor(pred.shape())};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out.value += std::abs(static_cast<double>(pred[i]));
    out.grad[i] = static_cast<real>(sign(pred[i]) / n);
  }
  out.value /= n;
  return out;
}

JointLoss loss_tbc(const Tensor& pred, const Tensor& target, const ClassifierTerm* cls, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
  auto t = loss_t(pred, target);
  auto b = loss_b(pred);
  JointLoss out;
  out.parts.l_l1 = t.l1;
  out.parts.l_ssim = t.ssim_loss;
  out.parts.l_b = b.value;
  out.parts.lambda = lambda;
  out.grad = std::move(t.grad);
  accumulate(out.grad, b.grad);
  if (cls) {
    if (!cls->d_input.same_shape(pred)) throw ShapeError("classifier gradient shape differs from the prediction");
    out.parts.l_c = cls->loss;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += static_cast<real>(lambda * cls->d_input[i]);
  }
  out.parts.finalize();
  return out;
}

}  // namespace tbc
