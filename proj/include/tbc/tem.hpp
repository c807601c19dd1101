#pragma once

#include <cstdint>
#include <vector>

#include "tbc/image.hpp"
#include "tbc/nn.hpp"

namespace tbc {

/// A TEM variant: base channels BC, maximum scale level L, input extents.
struct NetConfig {
  int bc = 4;
  int l = 3;
  int height = 64;
  int width = 64;

  /// Throws ShapeError unless BC >= 1, L >= 1 and H, W are positive multiples of 2^L.
  void validate() const;
};

/// Storage and compute figures from the closed-form formulas.
struct BudgetReport {
  std::uint64_t ops = 0;  ///< multiply-adds of the down/up module convolutions
  std::uint64_t m_m = 0;  ///< peak feature-map elements
  std::uint64_t m_p = 0;  ///< parameter count
  std::uint64_t m_total = 0;

  static double in_mebi(std::uint64_t v) { return static_cast<double>(v) / 1048576.0; }
};

/// ops = 4.5 BC^2 H W L, m_m = [BC (4 - 6/2^L) + 2] H W, m_p = 12 (4^L - 1) BC^2 + 18 BC.
/// Computed in integers (H W is a multiple of 4^L, so every term is exact).
BudgetReport budget(const NetConfig& cfg);

/// Encoder/decoder with additive skips.
///
///   s0 = relu(in(x))
///   s_l = relu(down_l(maxpool(s_{l-1})))                     l = 1..L
///   d_L = s_L
///   d_{l-1} = upsample(relu(up_l(d_l))) + s_{l-1}            l = L..1
///   y = out(d_0)
///
/// down_l maps BC*2^(l-1) -> BC*2^l channels and up_l maps them back. All
/// convolutions are bias-free with replicate padding; the output is linear.
struct TemNet {
  int bc = 0;
  int l = 0;
  nn::ConvLayer input_conv;
  std::vector<nn::ConvLayer> down;  ///< down[i] is level i+1
  std::vector<nn::ConvLayer> up;    ///< up[i] is level i+1
  nn::ConvLayer output_conv;

  /// Layers in construction (and serialization) order:
  /// input, down_1..down_L, up_L..up_1, output.
  std::vector<nn::ConvLayer*> layers();
  std::vector<const nn::ConvLayer*> layers() const;

  std::size_t parameter_count() const;
};

TemNet build_tem(const NetConfig& cfg, Rng& rng);

/// Intermediate activations kept for the backward pass.
struct TemCache {
  Tensor x;
  std::vector<Tensor> z;       ///< pre-activation of s_l, l = 0..L
  std::vector<Tensor> pooled;  ///< maxpool input to down_l, index l-1
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<Tensor> d;       ///< decoder tensors d_0..d_L
  std::vector<Tensor> u;       ///< pre-activation of up_l, index l-1
};

/// Forward on a [1,H,W] tensor. The cache is filled when non-null.
Tensor tem_forward(const TemNet& net, const Tensor& x, TemCache* cache = nullptr);

/// Parameter gradients aligned with `layers()`, plus the input gradient.
struct TemGrad {
  std::vector<Tensor> d_weights;
  Tensor d_input;
};

TemGrad tem_backward(const TemNet& net, const TemCache& cache, const Tensor& d_out);

/// f_T' = TEM(f_D). Throws ShapeError if the extents are not multiples of 2^L.
GrayImage extract(const TemNet& net, const GrayImage& f_d);

/// Multiply-add census of the down/up module convolutions at an H x W input.
std::uint64_t count_actual_ops(const TemNet& net, std::size_t h, std::size_t w);

}  // namespace tbc
