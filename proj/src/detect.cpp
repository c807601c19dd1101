#include "tbc/detect.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace tbc {

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

bool Mask::subset_of(const Mask& o) const {
  if (width != o.width || height != o.height) return false;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] && !o.bits[i]) return false;
  }
  return true;
}

GrayImage normalize(const GrayImage& img) {
  if (img.empty()) throw ShapeError("normalize of an empty image");
  const auto [lo, hi] = std::minmax_element(img.px.begin(), img.px.end());
  GrayImage out(img.width, img.height, 0.0f);
  const double mn = *lo, span = static_cast<double>(*hi) - mn;
  if (!(span > 0.0)) return out;
  for (std::size_t i = 0; i < img.size(); ++i) {
    out.px[i] = static_cast<float>(std::clamp((img.px[i] - mn) / span, 0.0, 1.0));
  }
  return out;
}

double threshold_value(const GrayImage& img, double k) {
  if (!(k > 0.0)) throw std::invalid_argument("threshold factor k must be positive");
  const std::vector<real> v(img.px.begin(), img.px.end());
  const Stats s = stats(v);
  return s.mean + k * s.stddev;
}

Mask adaptive_threshold(const GrayImage& img, double k) {
  const double t = threshold_value(img, k);
  Mask m(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) m.bits[i] = static_cast<double>(img.px[i]) > t;
  return m;
}

std::vector<Detection> connected_components(const Mask& mask, const GrayImage* values) {
  if (values && (values->width != mask.width || values->height != mask.height)) {
    throw ShapeError("connected_components: value image extents differ from the mask");
  }
  const int w = mask.width, h = mask.height;
  std::vector<std::uint8_t> seen(mask.bits.size(), 0);
  std::vector<Detection> out;
  std::vector<int> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t start = static_cast<std::size_t>(y) * w + x;
      if (!mask.bits[start] || seen[start]) continue;
      seen[start] = 1;
      stack.assign(1, static_cast<int>(start));
      int x0 = x, x1 = x, y0 = y, y1 = y, count = 0;
      double sx = 0.0, sy = 0.0;
      float peak = values ? values->px[start] : 1.0f;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        const int px = p % w, py = p / w;
        ++count;
        sx += px;
        sy += py;
        x0 = std::min(x0, px);
        x1 = std::max(x1, px);
        y0 = std::min(y0, py);
        y1 = std::max(y1, py);
        if (values) peak = std::max(peak, values->px[static_cast<std::size_t>(p)]);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = px + dx, ny = py + dy;
            if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
            if (mask.bits[q] && !seen[q]) {
              seen[q] = 1;
              stack.push_back(static_cast<int>(q));
            }
          }
        }
      }
      Detection d;
      d.cx = sx / count;
      d.cy = sy / count;
      d.pixel_count = count;
      d.peak_value = peak;
      d.bbox = Box{x0, y0, y1 - y0 + 1, x1 - x0 + 1};
      out.push_back(d);
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
    return a.bbox.y0 != b.bbox.y0 ? a.bbox.y0 < b.bbox.y0 : a.bbox.x0 < b.bbox.x0;
  });
  return out;
}

DetectResult detect_scores(const GrayImage& score, double k) {
  DetectResult r;
  r.target = score;
  r.normalized = normalize(score);
  r.mask = adaptive_threshold(r.normalized, k);
  r.detections = connected_components(r.mask, &r.normalized);
  return r;
}

DetectResult detect(const TemNet& net, const GrayImage& f_d, double k) { return detect_scores(extract(net, f_d), k); }

}  // namespace tbc
