#include "tbc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

namespace tbc {

namespace {

bool claims(const Detection& d, const Box& b, double r) {
  return d.cx >= b.x0 - r && d.cx <= b.x1() - 1 + r && d.cy >= b.y0 - r && d.cy <= b.y1() - 1 + r;
}

// Lexicographic score of a partial assignment.
struct Score {
  int matches = -1;
  long long pixels = 0;
  bool operator<(const Score& o) const { return matches != o.matches ? matches < o.matches : pixels < o.pixels; }
};

constexpr std::size_t kExactTargets = 16;

}  // namespace

MatchResult match_and_score(const std::vector<Detection>& detections, const GroundTruth& gt, double radius) {
  if (radius < 0) throw std::invalid_argument("match radius must be non-negative");
  const std::size_t n = detections.size(), m = gt.size();
  MatchResult r;
  r.target_of.assign(n, -1);
  long long total_px = 0;
  for (const auto& d : detections) total_px += d.pixel_count;

  if (m <= kExactTargets) {
    // best[mask] over detections processed so far; choice[i][mask] = target or -1.
    const std::size_t states = std::size_t{1} << m;
    std::vector<Score> best(states), next(states);
    best[0] = Score{0, 0};
    std::vector<std::vector<int>> choice(n, std::vector<int>(states, -2));
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(next.begin(), next.end(), Score{});
      for (std::size_t mask = 0; mask < states; ++mask) {
        if (best[mask].matches < 0) continue;
        if (next[mask] < best[mask]) {
          next[mask] = best[mask];
          choice[i][mask] = -1;
        }
        for (std::size_t t = 0; t < m; ++t) {
          if ((mask >> t) & 1 || !claims(detections[i], gt[t], radius)) continue;
          const std::size_t nm = mask | (std::size_t{1} << t);
          const Score s{best[mask].matches + 1, best[mask].pixels + detections[i].pixel_count};
          if (next[nm] < s) {
            next[nm] = s;
            choice[i][nm] = static_cast<int>(t);
          }
        }
      }
      std::swap(best, next);
    }
    std::size_t mask = static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin());
    for (std::size_t i = n; i-- > 0;) {
      const int c = choice[i][mask];
      if (c >= 0) {
        r.target_of[i] = c;
        mask &= ~(std::size_t{1} << c);
      }
    }
  } else {
    // Large frames: greedy by pixel count.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].pixel_count > detections[b].pixel_count; });
    std::vector<bool> used(m, false);
    for (auto i : order) {
      for (std::size_t t = 0; t < m; ++t) {
        if (!used[t] && claims(detections[i], gt[t], radius)) {
          used[t] = true;
          r.target_of[i] = static_cast<int>(t);
          break;
        }
      }
    }
  }
  long long matched_px = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.target_of[i] >= 0) {
      ++r.true_detections;
      matched_px += detections[i].pixel_count;
    }
  }
  r.false_pixels = total_px - matched_px;
  return r;
}

double RocCurve::pd_at(double max_fa) const {
  double best = 0.0;
  for (const auto& p : points) {
    if (p.fa <= max_fa) best = std::max(best, p.pd);
  }
  return best;
}

namespace {

template <class MaskFn>
RocCurve sweep(const std::vector<GrayImage>& scores, const std::vector<GroundTruth>& gts,
               std::vector<double> thresholds, double radius, MaskFn make_mask) {
  if (scores.size() != gts.size()) throw std::invalid_argument("one ground-truth list per score image required");
  if (thresholds.size() < 2) throw std::invalid_argument("a ROC sweep needs at least two thresholds");
  std::sort(thresholds.begin(), thresholds.end());
  RocCurve c;
  for (std::size_t f = 0; f < scores.size(); ++f) {
    c.total_targets += static_cast<long long>(gts[f].size());
    c.total_pixels += static_cast<long long>(scores[f].size());
  }
  std::vector<GrayImage> norm;
  norm.reserve(scores.size());
  for (const auto& s : scores) norm.push_back(normalize(s));
  for (double t : thresholds) {
    RocPoint p;
    p.threshold = t;
    for (std::size_t f = 0; f < norm.size(); ++f) {
      const Mask mask = make_mask(norm[f], t);
      const auto m = match_and_score(connected_components(mask, &norm[f]), gts[f], radius);
      p.true_detections += m.true_detections;
      p.false_pixels += m.false_pixels;
    }
    p.pd = c.total_targets ? static_cast<double>(p.true_detections) / static_cast<double>(c.total_targets) : 0.0;
    p.fa = c.total_pixels ? static_cast<double>(p.false_pixels) / static_cast<double>(c.total_pixels) : 0.0;
    c.points.push_back(p);
  }
  return c;
}

}  // namespace

RocCurve roc(const std::vector<GrayImage>& scores, const std::vector<GroundTruth>& gts,
             const std::vector<double>& thresholds, double radius) {
  return sweep(scores, gts, thresholds, radius, [](const GrayImage& img, double t) {
    Mask m(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) m.bits[i] = static_cast<double>(img.px[i]) > t;
    return m;
  });
}

RocCurve roc_adaptive(const std::vector<GrayImage>& scores, const std::vector<GroundTruth>& gts,
                      const std::vector<double>& ks, double radius) {
  return sweep(scores, gts, ks, radius, [](const GrayImage& img, double k) { return adaptive_threshold(img, k); });
}

// --- contrast metrics ---------------------------------------------------------

namespace {

struct RingStats {
  double mean = 0.0;
  double stddev = 0.0;
};

RingStats ring_stats(const GrayImage& img, const Box& box) {
  const Box outer{box.x0 - kRingWidth, box.y0 - kRingWidth, box.h0 + 2 * kRingWidth, box.w0 + 2 * kRingWidth};
  if (!box.inside(img.width, img.height) || !outer.inside(img.width, img.height)) {
    throw ShapeError("target box plus its " + std::to_string(kRingWidth) + "-px ring leaves the image");
  }
  std::vector<real> v;
  for (int y = outer.y0; y < outer.y1(); ++y) {
    for (int x = outer.x0; x < outer.x1(); ++x) {
      if (!box.contains(x, y)) v.push_back(img(x, y));
    }
  }
  const Stats s = stats(v);
  return {s.mean, s.stddev};
}

double safe_div(double num, double den, const char* what) {
  if (den == 0.0) throw NumericalError(std::string("zero denominator in ") + what + " (strict mode)");
  return num / den;
}

}  // namespace

double scr(const GrayImage& img, const Box& box, double lambda) {
  if (lambda < 0) throw std::invalid_argument("stabilizer must be non-negative");
  const RingStats rs = ring_stats(img, box);
  float mt = img(box.x0, box.y0);
  for (int y = box.y0; y < box.y1(); ++y) {
    for (int x = box.x0; x < box.x1(); ++x) mt = std::max(mt, img(x, y));
  }
  return safe_div(std::abs(mt - rs.mean), rs.stddev + lambda, "SCR");
}

double scrg(const GrayImage& in, const GrayImage& out, const Box& box, double lambda) {
  if (!in.same_extents(out)) throw ShapeError("SCRG: image extents differ");
  return safe_div(scr(out, box, lambda), scr(in, box, lambda) + lambda, "SCRG");
}

double bsf(const GrayImage& in, const GrayImage& out, const Box& box, double lambda) {
  if (!in.same_extents(out)) throw ShapeError("BSF: image extents differ");
  if (lambda < 0) throw std::invalid_argument("stabilizer must be non-negative");
  return safe_div(ring_stats(in, box).stddev, ring_stats(out, box).stddev + lambda, "BSF");
}

// --- baselines ----------------------------------------------------------------

namespace {

void check_window(const GrayImage& img, int w, const char* what) {
  if (w < 1 || w % 2 == 0) throw std::invalid_argument(std::string(what) + ": window must be odd");
  if (w > img.width || w > img.height) throw ShapeError(std::string(what) + ": window larger than the image");
}

inline float at_clamped(const GrayImage& img, int x, int y) {
  return img(std::clamp(x, 0, img.width - 1), std::clamp(y, 0, img.height - 1));
}

template <class Pick>
GrayImage square_filter(const GrayImage& img, int se, Pick pick) {
  const int r = se / 2;
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float v = at_clamped(img, x - r, y - r);
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) v = pick(v, at_clamped(img, x + dx, y + dy));
      }
      out(x, y) = v;
    }
  }
  return out;
}

constexpr int kDirs[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};  // (dy, dx)

template <class Reduce>
GrayImage directional(const GrayImage& img, int w, Reduce reduce) {
  const int r = w / 2;
  GrayImage out(img.width, img.height);
  std::vector<float> line(static_cast<std::size_t>(w));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double m = -std::numeric_limits<double>::infinity();
      for (const auto& d : kDirs) {
        for (int t = -r; t <= r; ++t) line[static_cast<std::size_t>(t + r)] = at_clamped(img, x + t * d[1], y + t * d[0]);
        m = std::max(m, reduce(line));
      }
      out(x, y) = static_cast<float>(static_cast<double>(img(x, y)) - m);
    }
  }
  return out;
}

}  // namespace

GrayImage tophat(const GrayImage& img, int se) {
  check_window(img, se, "tophat");
  const GrayImage eroded = square_filter(img, se, [](float a, float b) { return std::min(a, b); });
  const GrayImage opened = square_filter(eroded, se, [](float a, float b) { return std::max(a, b); });
  GrayImage out(img.width, img.height);
  for (std::size_t i = 0; i < img.size(); ++i) out.px[i] = img.px[i] - opened.px[i];
  return out;
}

GrayImage max_mean(const GrayImage& img, int w) {
  check_window(img, w, "max_mean");
  return directional(img, w, [](const std::vector<float>& line) {
    double s = 0.0;
    for (float v : line) s += v;
    return s / static_cast<double>(line.size());
  });
}

GrayImage max_median(const GrayImage& img, int w) {
  check_window(img, w, "max_median");
  return directional(img, w, [](std::vector<float> line) {
    const auto mid = line.begin() + static_cast<std::ptrdiff_t>(line.size() / 2);
    std::nth_element(line.begin(), mid, line.end());
    return static_cast<double>(*mid);
  });
}

// --- output -----------------------------------------------------------------

std::string format_g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void write_roc_csv(std::ostream& out, const RocCurve& curve) {
  out << "threshold,fa,pd,true_detections,false_pixels\n";
  for (const auto& p : curve.points) {
    out << format_g6(p.threshold) << ',' << format_g6(p.fa) << ',' << format_g6(p.pd) << ',' << p.true_detections
        << ',' << p.false_pixels << '\n';
  }
}

GrayImage render_roc(const RocCurve& curve, int width, int height) {
  GrayImage img(width, height, 0.0f);
  const int pad = 12;
  const double lo = -7.0;  // log10 Fa axis
  auto px = [&](double fa, double pd, int& x, int& y) {
    const double lf = fa > 0 ? std::clamp(std::log10(fa), lo, 0.0) : lo;
    x = pad + static_cast<int>(std::lround((lf - lo) / -lo * (width - 2 * pad - 1)));
    y = height - 1 - pad - static_cast<int>(std::lround(std::clamp(pd, 0.0, 1.0) * (height - 2 * pad - 1)));
  };
  for (int x = pad; x < width - pad; ++x) img(x, height - 1 - pad) = 0.4f;
  for (int y = pad; y < height - pad; ++y) img(pad, y) = 0.4f;
  std::vector<std::pair<int, int>> pts;
  for (const auto& p : curve.points) {
    int x, y;
    px(p.fa, p.pd, x, y);
    pts.emplace_back(x, y);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const auto [x0, y0] = pts[i];
    const auto [x1, y1] = pts[i + 1];
    const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int s = 0; s <= steps; ++s) {
      const int x = x0 + (x1 - x0) * s / steps, y = y0 + (y1 - y0) * s / steps;
      img(x, y) = 1.0f;
    }
  }
  for (const auto& [x, y] : pts) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (x + dx >= 0 && x + dx < width && y + dy >= 0 && y + dy < height) img(x + dx, y + dy) = 1.0f;
      }
    }
  }
  return img;
}

}  // namespace tbc
