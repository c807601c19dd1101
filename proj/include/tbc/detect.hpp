#pragma once

#include <cstdint>
#include <vector>

#include "tbc/image.hpp"
#include "tbc/tem.hpp"

namespace tbc {

inline constexpr double kDefaultK = 25.0;

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool operator()(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t popcount() const;
  /// True when every set pixel of this mask is also set in `o`.
  bool subset_of(const Mask& o) const;

  friend bool operator==(const Mask&, const Mask&) = default;
};

struct Detection {
  double cx = 0.0;  ///< centroid column
  double cy = 0.0;  ///< centroid row
  int pixel_count = 0;
  float peak_value = 0.0f;
  Box bbox;
};

/// Min-max rescale to [0,1]. A flat image maps to all zeros.
GrayImage normalize(const GrayImage& img);

/// Mask of pixels strictly above T = mean + k * stddev (population).
/// A flat image yields an empty mask.
Mask adaptive_threshold(const GrayImage& img, double k);
double threshold_value(const GrayImage& img, double k);

/// 8-connected components ordered by the (top, left) corner of their boxes.
/// Peak values are read from `values` when given.
std::vector<Detection> connected_components(const Mask& mask, const GrayImage* values = nullptr);

struct DetectResult {
  GrayImage target;  ///< raw extractor output f_T'
  GrayImage normalized;
  Mask mask;
  std::vector<Detection> detections;
};

/// Normalize, threshold and label a score image.
DetectResult detect_scores(const GrayImage& score, double k);
/// f_T' = TEM(f_D) followed by detect_scores.
DetectResult detect(const TemNet& net, const GrayImage& f_d, double k = kDefaultK);

}  // namespace tbc
