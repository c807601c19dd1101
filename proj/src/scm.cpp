#include "tbc/scm.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace tbc {

namespace {

std::size_t pool_kernel(std::size_t eh, std::size_t ew) { return std::min<std::size_t>(4, std::min(eh, ew)); }

}  // namespace

std::vector<Tensor*> ScmNet::parameters() {
  std::vector<Tensor*> v;
  for (auto& c : convs) {
    v.push_back(&c.weights);
    v.push_back(&*c.bias);
  }
  v.push_back(&fc.weights);
  v.push_back(&fc.bias);
  return v;
}

std::vector<const Tensor*> ScmNet::parameters() const {
  std::vector<const Tensor*> v;
  for (const auto& c : convs) {
    v.push_back(&c.weights);
    v.push_back(&*c.bias);
  }
  v.push_back(&fc.weights);
  v.push_back(&fc.bias);
  return v;
}

std::size_t scm_fc_inputs(int h, int w) {
  if (h <= 0 || w <= 0 || h % 16 || w % 16) {
    throw ShapeError("SCM input extents must be positive multiples of 16, got " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  const auto eh = static_cast<std::size_t>(h / 16), ew = static_cast<std::size_t>(w / 16);
  const std::size_t k = pool_kernel(eh, ew);
  if (eh % k || ew % k) {
    throw ShapeError("SCM mean pool (k=" + std::to_string(k) + ") does not tile " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  return kScmChannels.back() * (eh / k) * (ew / k);
}

ScmNet build_scm(int classes, int height, int width, Rng& rng) {
  if (classes < 2) throw std::invalid_argument("SCM needs at least 2 classes");
  const std::size_t fc_in = scm_fc_inputs(height, width);
  ScmNet net;
  std::size_t c_in = 1;
  for (std::size_t i = 0; i < kScmChannels.size(); ++i) {
    net.convs[i] = nn::make_conv(c_in, kScmChannels[i], nn::Padding::zero, true, rng);
    c_in = kScmChannels[i];
  }
  net.fc = nn::make_dense(fc_in, static_cast<std::size_t>(classes), rng);
  return net;
}

Tensor scm_logits(const ScmNet& net, const Tensor& x, ScmCache* cache) {
  if (x.rank() != 3 || x.extent(0) != 1) throw ShapeError("SCM expects a [1,H,W] input, got " + shape_string(x.shape()));
  const std::size_t fc_in = scm_fc_inputs(static_cast<int>(x.extent(1)), static_cast<int>(x.extent(2)));
  if (fc_in != net.fc.in_features()) {
    throw ShapeError("SCM built for " + std::to_string(net.fc.in_features()) + " pooled features, input " +
                     shape_string(x.shape()) + " yields " + std::to_string(fc_in));
  }
  ScmCache local;
  ScmCache& c = cache ? *cache : local;
  c.x = x;
  Tensor h = x;
  for (std::size_t i = 0; i < net.convs.size(); ++i) {
    c.block_in[i] = std::move(h);
    c.z[i] = nn::conv2d_forward(net.convs[i], c.block_in[i]);
    auto mp = nn::maxpool2(nn::relu(c.z[i]));
    c.argmax[i] = std::move(mp.argmax);
    h = std::move(mp.out);
  }
  c.pool_k = pool_kernel(h.extent(1), h.extent(2));
  c.pooled_in = h;
  c.features = nn::avgpool(h, c.pool_k, c.pool_k);
  return nn::fully_connected(net.fc.weights, net.fc.bias, c.features);
}

Tensor classify(const ScmNet& net, const Tensor& f_t) { return nn::softmax(scm_logits(net, f_t)); }

Tensor classify(const ScmNet& net, const GrayImage& f_t) { return classify(net, to_tensor(f_t)); }

ScmResult scm_forward_backward(const ScmNet& net, const Tensor& f_t, std::size_t label, bool param_grads) {
  if (label >= net.classes()) {
    throw std::out_of_range("label " + std::to_string(label) + " outside [0," + std::to_string(net.classes() - 1) + "]");
  }
  ScmCache c;
  const Tensor logits = scm_logits(net, f_t, &c);
  auto ce = nn::softmax_cross_entropy(logits, label);

  ScmResult r;
  r.loss = ce.loss;
  r.probs = std::move(ce.probs);

  auto gfc = nn::fully_connected_backward(net.fc.weights, c.features, ce.d_logits);
  Tensor g = nn::avgpool_backward(c.pooled_in.shape(), c.pool_k, c.pool_k, gfc.d_input);
  std::array<Tensor, 4> dw, db;
  for (std::size_t i = net.convs.size(); i-- > 0;) {
    Tensor g_relu = nn::maxpool2_backward(c.z[i].shape(), c.argmax[i], g);
    Tensor g_z = nn::relu_backward(c.z[i], g_relu);
    auto gc = nn::conv2d_backward(net.convs[i], c.block_in[i], g_z, param_grads);
    if (param_grads) {
      dw[i] = std::move(gc.d_weights);
      db[i] = std::move(*gc.d_bias);
    }
    g = std::move(gc.d_input);
  }
  r.d_input = std::move(g);
  if (param_grads) {
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
      r.d_params.push_back(std::move(dw[i]));
      r.d_params.push_back(std::move(db[i]));
    }
    r.d_params.push_back(std::move(gfc.d_weights));
    r.d_params.push_back(std::move(gfc.d_bias));
  }
  return r;
}

}  // namespace tbc
