#pragma once

#include <algorithm>
#include <cmath>

#include "tbc/image.hpp"
#include "tbc/tensor.hpp"

namespace tbc::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

inline GrayImage random_image(int w, int h, Rng& rng, double lo = 0.0, double hi = 1.0) {
  GrayImage g(w, h);
  for (auto& v : g.px) v = static_cast<float>(rng.uniform(lo, hi));
  return g;
}

// ||a - b|| / max(||a||, ||b||); 0 when both vanish.
inline double rel_error(const Tensor& a, const Tensor& b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double den = std::max(std::sqrt(na), std::sqrt(nb));
  return den == 0.0 ? 0.0 : std::sqrt(num) / den;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace tbc::testing

#include <functional>

namespace tbc::testing {

// Central differences of `f` at `x` compared against `analytic`.
inline double grad_check(const std::function<double(const Tensor&)>& f, const Tensor& x, const Tensor& analytic,
                         double eps = 1e-2) {
  return rel_error(finite_diff_grad(f, x, eps), analytic);
}

}  // namespace tbc::testing
