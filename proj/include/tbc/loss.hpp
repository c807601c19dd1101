#pragma once

#include "tbc/image.hpp"
#include "tbc/tensor.hpp"

namespace tbc {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimC1 = 0.02;
inline constexpr double kSsimC2 = 0.06;

/// Per-image loss terms. l_t = l_l1 + l_ssim and
/// total = l_t + l_b + lambda * l_c, accumulated in exactly that order.
struct LossBreakdown {
  double l_l1 = 0.0;
  double l_ssim = 0.0;  ///< 1 - SSIM
  double l_t = 0.0;
  double l_b = 0.0;
  double l_c = 0.0;
  double total = 0.0;
  double lambda = 1.0;

  void finalize();  ///< recomputes l_t and total from the parts
  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown& operator/=(double n);
};

struct ValueGrad {
  double value = 0.0;
  Tensor grad;  ///< d value / d first argument
};

/// Mean SSIM over every valid 11x11 box window (no padding), with the
/// stabilizers c1 = 0.02, c2 = 0.06 and population window statistics.
/// Inputs are [1,H,W] or [H,W] with H, W >= 11.
double ssim(const Tensor& x, const Tensor& y);
double ssim(const GrayImage& x, const GrayImage& y);
/// SSIM and its gradient with respect to x.
ValueGrad ssim_with_grad(const Tensor& x, const Tensor& y);

/// Mean absolute difference; subgradient sign(pred - target) / N with sign(0) = 0.
ValueGrad loss_l1(const Tensor& pred, const Tensor& target);
/// Target term: l1 plus (1 - SSIM), split into its parts.
struct TargetLoss {
  double l1 = 0.0;
  double ssim_loss = 0.0;
  Tensor grad;
};
TargetLoss loss_t(const Tensor& pred, const Tensor& target);
/// Background sparsity: mean |pred|, subgradient sign(pred) / N.
ValueGrad loss_b(const Tensor& pred);

/// The classifier's cross-entropy and its gradient with respect to the
/// classifier input (the extracted target image).
struct ClassifierTerm {
  double loss = 0.0;
  Tensor d_input;
};

struct JointLoss {
  LossBreakdown parts;
  Tensor grad;  ///< d total / d pred
};

/// Joint objective. `cls` may be null, which drops the classifier term (l_c = 0).
JointLoss loss_tbc(const Tensor& pred, const Tensor& target, const ClassifierTerm* cls, double lambda = 1.0);

}  // namespace tbc
