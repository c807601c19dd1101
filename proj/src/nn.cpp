#include "tbc/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tbc::nn {

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_chw(const Tensor& x, const char* what) {
  if (x.rank() != 3) throw ShapeError(std::string(what) + " expects [C,H,W], got " + shape_string(x.shape()));
}

// Source coordinate for tap offset d in [-1,1]; -1 marks a zero-padded tap.
inline long tap(long i, long d, long n, Padding p) {
  const long s = i + d;
  if (s >= 0 && s < n) return s;
  return p == Padding::replicate ? std::clamp(s, 0L, n - 1) : -1;
}

// Rows are (c, u, v), columns are output pixels.
MatD im2col(const Tensor& x, Padding p) {
  const long c_in = static_cast<long>(x.extent(0));
  const long h = static_cast<long>(x.extent(1));
  const long w = static_cast<long>(x.extent(2));
  MatD col(c_in * 9, h * w);
  for (long c = 0; c < c_in; ++c) {
    for (long u = 0; u < 3; ++u) {
      for (long v = 0; v < 3; ++v) {
        double* row = col.row(c * 9 + u * 3 + v).data();
        for (long i = 0; i < h; ++i) {
          const long si = tap(i, u - 1, h, p);
          for (long j = 0; j < w; ++j) {
            const long sj = tap(j, v - 1, w, p);
            row[i * w + j] = (si < 0 || sj < 0) ? 0.0 : static_cast<double>(x.at(c, si, sj));
          }
        }
      }
    }
  }
  return col;
}

Tensor col2im(const MatD& dcol, const Shape& in_shape, Padding p) {
  const long c_in = static_cast<long>(in_shape[0]);
  const long h = static_cast<long>(in_shape[1]);
  const long w = static_cast<long>(in_shape[2]);
  std::vector<double> acc(static_cast<std::size_t>(c_in * h * w), 0.0);
  for (long c = 0; c < c_in; ++c) {
    for (long u = 0; u < 3; ++u) {
      for (long v = 0; v < 3; ++v) {
        const double* row = dcol.row(c * 9 + u * 3 + v).data();
        for (long i = 0; i < h; ++i) {
          const long si = tap(i, u - 1, h, p);
          if (si < 0) continue;
          for (long j = 0; j < w; ++j) {
            const long sj = tap(j, v - 1, w, p);
            if (sj < 0) continue;
            acc[static_cast<std::size_t>((c * h + si) * w + sj)] += row[i * w + j];
          }
        }
      }
    }
  }
  return Tensor(Shape(in_shape), std::vector<real>(acc.begin(), acc.end()));
}

MatD weight_matrix(const Tensor& weights) {
  const auto rows = static_cast<long>(weights.extent(0));
  const auto cols = static_cast<long>(weights.size() / weights.extent(0));
  MatD m(rows, cols);
  for (long i = 0; i < rows * cols; ++i) m.data()[i] = static_cast<double>(weights[static_cast<std::size_t>(i)]);
  return m;
}

Tensor to_tensor(const MatD& m, Shape shape) {
  std::vector<real> v(static_cast<std::size_t>(m.size()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<real>(m.data()[i]);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

ConvLayer make_conv(std::size_t c_in, std::size_t c_out, Padding padding, bool with_bias, Rng& rng) {
  ConvLayer layer;
  layer.weights = Tensor({c_out, c_in, 3, 3});
  const double bound = std::sqrt(6.0 / static_cast<double>(c_in * 9));
  for (auto& w : layer.weights.data()) w = static_cast<real>(rng.uniform(-bound, bound));
  if (with_bias) layer.bias = Tensor({c_out});
  layer.padding = padding;
  return layer;
}

Tensor conv2d_forward(const ConvLayer& layer, const Tensor& x) {
  require_chw(x, "conv2d");
  if (x.extent(0) != layer.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.extent(0)) + " channels, layer expects " +
                     std::to_string(layer.in_channels()));
  }
  const MatD col = im2col(x, layer.padding);
  MatD y = weight_matrix(layer.weights) * col;
  if (layer.bias) {
    for (long o = 0; o < y.rows(); ++o) y.row(o).array() += static_cast<double>((*layer.bias)[static_cast<std::size_t>(o)]);
  }
  return to_tensor(y, {layer.out_channels(), x.extent(1), x.extent(2)});
}

ConvGrad conv2d_backward(const ConvLayer& layer, const Tensor& x, const Tensor& d_out, bool param_grads) {
  require_chw(x, "conv2d_backward");
  const Shape out_shape{layer.out_channels(), x.extent(1), x.extent(2)};
  if (d_out.shape() != out_shape) {
    throw ShapeError("conv2d_backward: gradient shape " + shape_string(d_out.shape()) + ", expected " +
                     shape_string(out_shape));
  }
  const long hw = static_cast<long>(x.extent(1) * x.extent(2));
  MatD dy(static_cast<long>(layer.out_channels()), hw);
  for (long i = 0; i < dy.size(); ++i) dy.data()[i] = static_cast<double>(d_out[static_cast<std::size_t>(i)]);

  ConvGrad g;
  const MatD dcol = weight_matrix(layer.weights).transpose() * dy;
  g.d_input = col2im(dcol, x.shape(), layer.padding);
  if (param_grads) {
    const MatD col = im2col(x, layer.padding);
    const MatD dw = dy * col.transpose();
    g.d_weights = to_tensor(dw, layer.weights.shape());
    if (layer.bias) {
      Tensor db({layer.out_channels()});
      for (long o = 0; o < dy.rows(); ++o) db[static_cast<std::size_t>(o)] = static_cast<real>(dy.row(o).sum());
      g.d_bias = std::move(db);
    }
  }
  return g;
}

std::uint64_t conv2d_ops(const ConvLayer& layer, std::size_t h, std::size_t w) {
  return 9ULL * h * w * layer.in_channels() * layer.out_channels();
}

// --- pooling ------------------------------------------------------------------

MaxPoolResult maxpool2(const Tensor& x) {
  require_chw(x, "maxpool2");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (h % 2 || w % 2) throw ShapeError("maxpool2 needs even extents, got " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  MaxPoolResult r{Tensor({c, oh, ow}), std::vector<std::uint32_t>(c * oh * ow)};
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++k) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.out[k] = x[best];
        r.argmax[k] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Shape& in_shape, const std::vector<std::uint32_t>& argmax, const Tensor& d_out) {
  if (argmax.size() != d_out.size()) throw ShapeError("maxpool2_backward: argmax/gradient size mismatch");
  Tensor dx(in_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) dx[argmax[k]] += d_out[k];
  return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
  require_chw(x, "upsample_nearest2");
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) out.at(ch, i, j) = x.at(ch, i / 2, j / 2);
    }
  }
  return out;
}

Tensor upsample_nearest2_backward(const Tensor& d_out) {
  require_chw(d_out, "upsample_nearest2_backward");
  const std::size_t c = d_out.extent(0), h = d_out.extent(1), w = d_out.extent(2);
  if (h % 2 || w % 2) throw ShapeError("upsample_nearest2_backward needs even extents");
  Tensor dx({c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) dx.at(ch, i / 2, j / 2) += d_out.at(ch, i, j);
    }
  }
  return dx;
}

namespace {

void check_avgpool(const Shape& s, std::size_t k, std::size_t stride) {
  if (s.size() != 3) throw ShapeError("avgpool expects [C,H,W], got " + shape_string(s));
  if (k == 0 || stride == 0 || s[1] < k || s[2] < k || (s[1] - k) % stride || (s[2] - k) % stride) {
    throw ShapeError("avgpool: kernel " + std::to_string(k) + " stride " + std::to_string(stride) +
                     " does not tile " + shape_string(s));
  }
}

}  // namespace

Tensor avgpool(const Tensor& x, std::size_t k, std::size_t stride) {
  check_avgpool(x.shape(), k, stride);
  const std::size_t c = x.extent(0);
  const std::size_t oh = (x.extent(1) - k) / stride + 1, ow = (x.extent(2) - k) / stride + 1;
  Tensor out({c, oh, ow});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) s += x.at(ch, i * stride + di, j * stride + dj);
        }
        out.at(ch, i, j) = static_cast<real>(s * inv);
      }
    }
  }
  return out;
}

Tensor avgpool_backward(const Shape& in_shape, std::size_t k, std::size_t stride, const Tensor& d_out) {
  check_avgpool(in_shape, k, stride);
  Tensor dx(in_shape);
  const std::size_t oh = (in_shape[1] - k) / stride + 1, ow = (in_shape[2] - k) / stride + 1;
  if (d_out.shape() != Shape{in_shape[0], oh, ow}) throw ShapeError("avgpool_backward: gradient shape mismatch");
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t ch = 0; ch < in_shape[0]; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const auto g = static_cast<real>(d_out.at(ch, i, j) * inv);
        for (std::size_t di = 0; di < k; ++di) {
          for (std::size_t dj = 0; dj < k; ++dj) dx.at(ch, i * stride + di, j * stride + dj) += g;
        }
      }
    }
  }
  return dx;
}

// --- dense ------------------------------------------------------------------

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
  DenseLayer d{Tensor({out, in}), Tensor({out})};
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (auto& w : d.weights.data()) w = static_cast<real>(rng.uniform(-bound, bound));
  return d;
}

Tensor fully_connected(const Tensor& weights, const Tensor& bias, const Tensor& x) {
  const std::size_t out = weights.extent(0), in = weights.extent(1);
  if (x.size() != in || bias.size() != out) {
    throw ShapeError("fully_connected: input " + shape_string(x.shape()) + " vs weights " +
                     shape_string(weights.shape()));
  }
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double s = bias[o];
    for (std::size_t i = 0; i < in; ++i) s += static_cast<double>(weights[o * in + i]) * x[i];
    y[o] = static_cast<real>(s);
  }
  return y;
}

DenseGrad fully_connected_backward(const Tensor& weights, const Tensor& x, const Tensor& d_out) {
  const std::size_t out = weights.extent(0), in = weights.extent(1);
  if (x.size() != in || d_out.size() != out) throw ShapeError("fully_connected_backward: shape mismatch");
  DenseGrad g{Tensor(x.shape()), Tensor(weights.shape()), Tensor({out})};
  for (std::size_t i = 0; i < in; ++i) {
    double s = 0.0;
    for (std::size_t o = 0; o < out; ++o) s += static_cast<double>(weights[o * in + i]) * d_out[o];
    g.d_input[i] = static_cast<real>(s);
  }
  for (std::size_t o = 0; o < out; ++o) {
    g.d_bias[o] = d_out[o];
    for (std::size_t i = 0; i < in; ++i) g.d_weights[o * in + i] = static_cast<real>(static_cast<double>(d_out[o]) * x[i]);
  }
  return g;
}

// --- activations --------------------------------------------------------------

Tensor relu(const Tensor& x) {
  Tensor y = x;
  relu_inplace(y);
  return y;
}

void relu_inplace(Tensor& x) {
  for (auto& v : x.data()) v = v > 0 ? v : real(0);
}

Tensor relu_backward(const Tensor& x, const Tensor& d_out) {
  if (!x.same_shape(d_out)) throw ShapeError("relu_backward: shape mismatch");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0 ? d_out[i] : real(0);
  return dx;
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty tensor");
  const double m = *std::max_element(logits.data().begin(), logits.data().end());
  std::vector<double> e(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) z += e[i] = std::exp(static_cast<double>(logits[i]) - m);
  Tensor p(logits.shape());
  for (std::size_t i = 0; i < e.size(); ++i) p[i] = static_cast<real>(e[i] / z);
  return p;
}

Tensor softmax_backward(const Tensor& probs, const Tensor& d_probs) {
  if (!probs.same_shape(d_probs)) throw ShapeError("softmax_backward: shape mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += static_cast<double>(probs[i]) * d_probs[i];
  Tensor dz(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) dz[i] = static_cast<real>(probs[i] * (d_probs[i] - dot));
  return dz;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::out_of_range("label " + std::to_string(label) + " outside " + std::to_string(logits.size()) + " classes");
  }
  ensure_finite(logits.data(), "classifier logits");
  const double m = *std::max_element(logits.data().begin(), logits.data().end());
  double z = 0.0;
  for (real v : logits.data()) z += std::exp(static_cast<double>(v) - m);
  const double log_z = m + std::log(z);
  CrossEntropy ce;
  ce.loss = log_z - static_cast<double>(logits[label]);
  ce.probs = Tensor(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) ce.probs[i] = static_cast<real>(std::exp(logits[i] - log_z));
  ce.d_logits = ce.probs;
  ce.d_logits[label] -= real(1);
  return ce;
}

}  // namespace tbc::nn
