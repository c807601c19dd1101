#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tbc/tensor.hpp"

namespace tbc::nn {

enum class Padding { zero, replicate };

/// 3x3, stride-1 convolution with padding 1. Weights are laid out
/// [C_out, C_in, 3, 3] and applied as cross-correlation (no kernel flip):
///   y[o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] * x[c, i+u-1, j+v-1]
struct ConvLayer {
  Tensor weights;
  std::optional<Tensor> bias;
  Padding padding = Padding::zero;

  std::size_t in_channels() const { return weights.extent(1); }
  std::size_t out_channels() const { return weights.extent(0); }
  std::size_t parameter_count() const { return weights.size() + (bias ? bias->size() : 0); }
};

/// Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)); bias zero.
ConvLayer make_conv(std::size_t c_in, std::size_t c_out, Padding padding, bool with_bias, Rng& rng);

struct ConvGrad {
  Tensor d_input;
  Tensor d_weights;
  std::optional<Tensor> d_bias;
};

Tensor conv2d_forward(const ConvLayer& layer, const Tensor& x);

/// Gradients of a conv layer given its forward input and the output gradient.
/// With `param_grads == false` only d_input is produced (frozen layers).
ConvGrad conv2d_backward(const ConvLayer& layer, const Tensor& x, const Tensor& d_out, bool param_grads = true);

/// Multiply-adds of one forward pass over an h x w input: 9 * h * w * C_in * C_out.
std::uint64_t conv2d_ops(const ConvLayer& layer, std::size_t h, std::size_t w);

// --- pooling / resampling --------------------------------------------------

struct MaxPoolResult {
  Tensor out;
  std::vector<std::uint32_t> argmax;  ///< flat input index feeding each output
};

/// Disjoint 2x2 max pooling. Ties resolve to the first element in scan order.
MaxPoolResult maxpool2(const Tensor& x);
Tensor maxpool2_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax, const Tensor& d_out);

Tensor upsample_nearest2(const Tensor& x);
/// Sums each 2x2 block of the incoming gradient.
Tensor upsample_nearest2_backward(const Tensor& d_out);

/// k x k mean pooling with the given stride, no padding.
Tensor avgpool(const Tensor& x, std::size_t k, std::size_t stride);
Tensor avgpool_backward(const Shape& in_shape, std::size_t k, std::size_t stride, const Tensor& d_out);

// --- dense ---------------------------------------------------------------

struct DenseLayer {
  Tensor weights;  ///< [out, in]
  Tensor bias;     ///< [out]

  std::size_t in_features() const { return weights.extent(1); }
  std::size_t out_features() const { return weights.extent(0); }
};

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng);

/// W x + b over a flat input (any shape with `in` elements).
Tensor fully_connected(const Tensor& weights, const Tensor& bias, const Tensor& x);

struct DenseGrad {
  Tensor d_input;  ///< same shape as the forward input
  Tensor d_weights;
  Tensor d_bias;
};

DenseGrad fully_connected_backward(const Tensor& weights, const Tensor& x, const Tensor& d_out);

// --- activations -------------------------------------------------------------

Tensor relu(const Tensor& x);
/// Passes the gradient where the forward input was strictly positive.
Tensor relu_backward(const Tensor& x, const Tensor& d_out);
void relu_inplace(Tensor& x);

/// Softmax over a flat vector, stabilized by subtracting the max logit.
Tensor softmax(const Tensor& logits);
Tensor softmax_backward(const Tensor& probs, const Tensor& d_probs);

struct CrossEntropy {
  double loss = 0.0;
  Tensor probs;
  Tensor d_logits;  ///< probs - onehot(label)
};

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label);

}  // namespace tbc::nn
