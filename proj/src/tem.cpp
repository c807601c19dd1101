#include "tbc/tem.hpp"

#include <string>

namespace tbc {

void NetConfig::validate() const {
  if (bc < 1) throw ShapeError("BC must be at least 1, got " + std::to_string(bc));
  if (l < 1 || l > 12) throw ShapeError("L must be in [1,12], got " + std::to_string(l));
  const int step = 1 << l;
  if (height <= 0 || width <= 0 || height % step || width % step) {
    throw ShapeError("TEM with L=" + std::to_string(l) + " requires extents divisible by " + std::to_string(step) +
                     ", got " + std::to_string(width) + "x" + std::to_string(height));
  }
}

BudgetReport budget(const NetConfig& cfg) {
  const std::uint64_t bc = static_cast<std::uint64_t>(cfg.bc);
  const std::uint64_t l = static_cast<std::uint64_t>(cfg.l);
  const std::uint64_t hw = static_cast<std::uint64_t>(cfg.height) * static_cast<std::uint64_t>(cfg.width);
  const std::uint64_t p2 = 1ULL << l;
  BudgetReport r;
  r.ops = 9 * bc * bc * hw * l / 2;
  r.m_m = bc * (4 * p2 - 6) * hw / p2 + 2 * hw;
  r.m_p = 12 * ((1ULL << (2 * l)) - 1) * bc * bc + 18 * bc;
  r.m_total = r.m_m + r.m_p;
  return r;
}

std::vector<nn::ConvLayer*> TemNet::layers() {
  std::vector<nn::ConvLayer*> v{&input_conv};
  for (auto& c : down) v.push_back(&c);
  for (auto it = up.rbegin(); it != up.rend(); ++it) v.push_back(&*it);
  v.push_back(&output_conv);
  return v;
}

std::vector<const nn::ConvLayer*> TemNet::layers() const {
  std::vector<const nn::ConvLayer*> v{&input_conv};
  for (const auto& c : down) v.push_back(&c);
  for (auto it = up.rbegin(); it != up.rend(); ++it) v.push_back(&*it);
  v.push_back(&output_conv);
  return v;
}

std::size_t TemNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto* c : layers()) n += c->parameter_count();
  return n;
}

TemNet build_tem(const NetConfig& cfg, Rng& rng) {
  NetConfig probe = cfg;
  probe.height = probe.width = 1 << cfg.l;  // extents are checked at extraction time
  probe.validate();
  const auto bc = static_cast<std::size_t>(cfg.bc);
  TemNet net;
  net.bc = cfg.bc;
  net.l = cfg.l;
  net.input_conv = nn::make_conv(1, bc, nn::Padding::replicate, false, rng);
  for (int lv = 1; lv <= cfg.l; ++lv) {
    net.down.push_back(nn::make_conv(bc << (lv - 1), bc << lv, nn::Padding::replicate, false, rng));
  }
  net.up.resize(static_cast<std::size_t>(cfg.l));
  for (int lv = cfg.l; lv >= 1; --lv) {
    net.up[lv - 1] = nn::make_conv(bc << lv, bc << (lv - 1), nn::Padding::replicate, false, rng);
  }
  net.output_conv = nn::make_conv(bc, 1, nn::Padding::replicate, false, rng);
  return net;
}

namespace {

void check_input(const TemNet& net, const Tensor& x) {
  if (x.rank() != 3 || x.extent(0) != 1) {
    throw ShapeError("TEM expects a [1,H,W] input, got " + shape_string(x.shape()));
  }
  NetConfig cfg{net.bc, net.l, static_cast<int>(x.extent(1)), static_cast<int>(x.extent(2))};
  cfg.validate();
}

}  // namespace

Tensor tem_forward(const TemNet& net, const Tensor& x, TemCache* cache) {
  check_input(net, x);
  const auto levels = static_cast<std::size_t>(net.l);
  std::vector<Tensor> z(levels + 1), s(levels + 1), pooled(levels), d(levels + 1), u(levels);
  std::vector<std::vector<std::uint32_t>> argmax(levels);

  z[0] = nn::conv2d_forward(net.input_conv, x);
  s[0] = nn::relu(z[0]);
  for (std::size_t i = 1; i <= levels; ++i) {
    auto mp = nn::maxpool2(s[i - 1]);
    pooled[i - 1] = std::move(mp.out);
    argmax[i - 1] = std::move(mp.argmax);
    z[i] = nn::conv2d_forward(net.down[i - 1], pooled[i - 1]);
    s[i] = nn::relu(z[i]);
  }
  d[levels] = s[levels];
  for (std::size_t i = levels; i >= 1; --i) {
    u[i - 1] = nn::conv2d_forward(net.up[i - 1], d[i]);
    Tensor v = nn::upsample_nearest2(nn::relu(u[i - 1]));
    if (!v.same_shape(s[i - 1])) {
      throw ShapeError("skip fusion mismatch at level " + std::to_string(i - 1) + ": " + shape_string(v.shape()) +
                       " vs " + shape_string(s[i - 1].shape()));
    }
    accumulate(v, s[i - 1]);
    d[i - 1] = std::move(v);
  }
  Tensor y = nn::conv2d_forward(net.output_conv, d[0]);

  if (cache) {
    cache->x = x;
    cache->z = std::move(z);
    cache->pooled = std::move(pooled);
    cache->argmax = std::move(argmax);
    cache->d = std::move(d);
    cache->u = std::move(u);
  }
  return y;
}

TemGrad tem_backward(const TemNet& net, const TemCache& cache, const Tensor& d_out) {
  const auto levels = static_cast<std::size_t>(net.l);
  std::vector<Tensor> dw_down(levels), dw_up(levels);
  std::vector<Tensor> g_s(levels + 1);

  auto g = nn::conv2d_backward(net.output_conv, cache.d[0], d_out);
  Tensor dw_out = std::move(g.d_weights);
  Tensor g_d = std::move(g.d_input);  // gradient wrt d_{i-1}
  for (std::size_t i = 1; i <= levels; ++i) {
    g_s[i - 1] = g_d;
    Tensor g_r = nn::upsample_nearest2_backward(g_d);
    Tensor g_u = nn::relu_backward(cache.u[i - 1], g_r);
    auto gu = nn::conv2d_backward(net.up[i - 1], cache.d[i], g_u);
    dw_up[i - 1] = std::move(gu.d_weights);
    g_d = std::move(gu.d_input);
  }
  g_s[levels] = std::move(g_d);
  for (std::size_t i = levels; i >= 1; --i) {
    Tensor g_z = nn::relu_backward(cache.z[i], g_s[i]);
    auto gd = nn::conv2d_backward(net.down[i - 1], cache.pooled[i - 1], g_z);
    dw_down[i - 1] = std::move(gd.d_weights);
    accumulate(g_s[i - 1], nn::maxpool2_backward(cache.z[i - 1].shape(), cache.argmax[i - 1], gd.d_input));
  }
  Tensor g_z0 = nn::relu_backward(cache.z[0], g_s[0]);
  auto gi = nn::conv2d_backward(net.input_conv, cache.x, g_z0);

  TemGrad out;
  out.d_weights.push_back(std::move(gi.d_weights));
  for (auto& t : dw_down) out.d_weights.push_back(std::move(t));
  for (auto it = dw_up.rbegin(); it != dw_up.rend(); ++it) out.d_weights.push_back(std::move(*it));
  out.d_weights.push_back(std::move(dw_out));
  out.d_input = std::move(gi.d_input);
  return out;
}

GrayImage extract(const TemNet& net, const GrayImage& f_d) {
  return to_image(tem_forward(net, to_tensor(f_d)));
}

std::uint64_t count_actual_ops(const TemNet& net, std::size_t h, std::size_t w) {
  std::uint64_t total = 0;
  for (int lv = 1; lv <= net.l; ++lv) {
    const std::size_t hl = h >> lv, wl = w >> lv;
    total += nn::conv2d_ops(net.down[lv - 1], hl, wl);
    total += nn::conv2d_ops(net.up[lv - 1], hl, wl);
  }
  return total;
}

}  // namespace tbc
