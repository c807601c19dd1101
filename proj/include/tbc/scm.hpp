#pragma once

#include <array>
#include <vector>

#include "tbc/image.hpp"
#include "tbc/nn.hpp"

namespace tbc {

inline constexpr std::array<std::size_t, 4> kScmChannels{32, 64, 32, 16};
inline constexpr int kDefaultScmClasses = 4;

/// Target-count classifier: four conv(3x3, zero pad, bias) + ReLU + 2x2 maxpool
/// blocks with 32, 64, 32, 16 channels, then mean pooling, then a linear layer
/// into C_SCM logits. Mean pooling uses kernel = stride = min(4, extent), so a
/// 256x256 input reaches the classifier as 16x4x4 = 256 features and a 64x64
/// input as 16x1x1.
struct ScmNet {
  std::array<nn::ConvLayer, 4> convs;
  nn::DenseLayer fc;

  std::size_t classes() const { return fc.out_features(); }
  /// Parameter tensors in serialization order: w0, b0, ..., w3, b3, fc_w, fc_b.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
};

/// Classifier input length for an h x w image. Throws ShapeError unless h and
/// w are multiples of 16 whose pooled extents tile the mean pool.
std::size_t scm_fc_inputs(int h, int w);

ScmNet build_scm(int classes, int height, int width, Rng& rng);

struct ScmCache {
  Tensor x;
  std::array<Tensor, 4> block_in;
  std::array<Tensor, 4> z;
  std::array<std::vector<std::uint32_t>, 4> argmax;
  Tensor pooled_in;  ///< input to the mean pool
  std::size_t pool_k = 0;
  Tensor features;   ///< flattened mean-pool output
};

Tensor scm_logits(const ScmNet& net, const Tensor& x, ScmCache* cache = nullptr);

/// Softmax class probabilities for a target image.
Tensor classify(const ScmNet& net, const GrayImage& f_t);
Tensor classify(const ScmNet& net, const Tensor& f_t);

struct ScmResult {
  double loss = 0.0;
  Tensor probs;
  Tensor d_input;                ///< dL_C / d f_T, shape of the input
  std::vector<Tensor> d_params;  ///< aligned with parameters(); empty when skipped
};

/// Cross-entropy against `label` with gradients. With `param_grads == false`
/// the parameter gradients are skipped (frozen classifier).
ScmResult scm_forward_backward(const ScmNet& net, const Tensor& f_t, std::size_t label, bool param_grads);

}  // namespace tbc
