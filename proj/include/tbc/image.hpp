#pragma once

#include <filesystem>
#include <vector>

#include "tbc/tensor.hpp"

namespace tbc {

/// Single-channel raster, row-major. Sensor and synthesized images hold
/// values in [0,1]; network score maps (TEM output) reuse the type with
/// unrestricted finite values until they are normalized.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> px;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f);

  float& operator()(int x, int y) { return px[static_cast<std::size_t>(y) * width + x]; }
  float operator()(int x, int y) const { return px[static_cast<std::size_t>(y) * width + x]; }

  std::size_t size() const noexcept { return px.size(); }
  bool empty() const noexcept { return px.empty(); }
  bool same_extents(const GrayImage& o) const noexcept { return width == o.width && height == o.height; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Axis-aligned pixel box: top-left (x0, y0), h0 rows by w0 columns.
struct Box {
  int x0 = 0;
  int y0 = 0;
  int h0 = 0;
  int w0 = 0;

  int x1() const { return x0 + w0; }  ///< exclusive
  int y1() const { return y0 + h0; }  ///< exclusive
  bool contains(double x, double y) const { return x >= x0 && x <= x1() - 1 && y >= y0 && y <= y1() - 1; }
  bool inside(int width, int height) const { return x0 >= 0 && y0 >= 0 && w0 > 0 && h0 > 0 && x1() <= width && y1() <= height; }
  /// True when the boxes, each grown by `gap` pixels, overlap.
  bool near(const Box& o, int gap = 0) const {
    return x0 < o.x1() + gap && o.x0 < x1() + gap && y0 < o.y1() + gap && o.y0 < y1() + gap;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

/// True when every pixel lies in [0,1].
bool in_unit_range(const GrayImage& img);

/// [1,H,W] tensor view of an image (copy).
Tensor to_tensor(const GrayImage& img);
/// Image from a [1,H,W] or [H,W] tensor.
GrayImage to_image(const Tensor& t);

/// Bilinear resize with half-pixel centers and edge clamping.
GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h);

/// Crop a w x h window whose top-left corner is (x0, y0).
GrayImage crop(const GrayImage& src, int x0, int y0, int w, int h);

// --- PGM (P5) --------------------------------------------------------------
//
// Binary PGM as netpbm defines it: maxval < 256 stores one byte per sample,
// otherwise two bytes, most significant first. Samples map linearly to
// [0,1] as v / maxval. Writing quantizes round(clamp(v,0,1) * maxval).

GrayImage read_pgm(const std::filesystem::path& path);
GrayImage decode_pgm(const std::vector<unsigned char>& bytes);
void write_pgm(const std::filesystem::path& path, const GrayImage& img, int bits = 8);
std::vector<unsigned char> encode_pgm(const GrayImage& img, int bits = 8);

}  // namespace tbc
