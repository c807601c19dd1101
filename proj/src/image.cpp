#include "tbc/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace tbc {

GrayImage::GrayImage(int w, int h, float fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) {
    throw ShapeError("image extents must be positive, got " + std::to_string(w) + "x" + std::to_string(h));
  }
  px.assign(static_cast<std::size_t>(w) * h, fill);
}

bool in_unit_range(const GrayImage& img) {
  return std::all_of(img.px.begin(), img.px.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

Tensor to_tensor(const GrayImage& img) {
  std::vector<real> v(img.px.begin(), img.px.end());
  return Tensor({1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)}, std::move(v));
}

GrayImage to_image(const Tensor& t) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 3 && t.extent(0) == 1) {
    h = t.extent(1);
    w = t.extent(2);
  } else if (t.rank() == 2) {
    h = t.extent(0);
    w = t.extent(1);
  } else {
    throw ShapeError("to_image expects [1,H,W] or [H,W], got " + shape_string(t.shape()));
  }
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  std::transform(t.data().begin(), t.data().end(), img.px.begin(), [](real v) { return static_cast<float>(v); });
  return img;
}

GrayImage resize_bilinear(const GrayImage& src, int out_w, int out_h) {
  if (src.empty()) throw ShapeError("resize of an empty image");
  GrayImage out(out_w, out_h);
  const double sx = static_cast<double>(src.width) / out_w;
  const double sy = static_cast<double>(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src(x0, y0) + wx * src(x1, y0);
      const double bot = (1.0 - wx) * src(x0, y1) + wx * src(x1, y1);
      out(x, y) = static_cast<float>((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

GrayImage crop(const GrayImage& src, int x0, int y0, int w, int h) {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > src.width || y0 + h > src.height) {
    throw ShapeError("crop window outside the image");
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    std::copy_n(&src.px[static_cast<std::size_t>(y0 + y) * src.width + x0], w,
                &out.px[static_cast<std::size_t>(y) * w]);
  }
  return out;
}

// --- PGM --------------------------------------------------------------------

namespace {

class HeaderReader {
public:
  explicit HeaderReader(const std::vector<unsigned char>& b) : bytes_(b) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  long read_uint() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) throw DataError("malformed PGM header");
    long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000'000) throw DataError("PGM header value out of range");
      ++pos_;
    }
    return v;
  }

  std::size_t pos_ = 0;

private:
  const std::vector<unsigned char>& bytes_;
};

}  // namespace

GrayImage decode_pgm(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw DataError("not a binary PGM (P5)");
  HeaderReader hr(bytes);
  hr.pos_ = 2;
  const long w = hr.read_uint();
  const long h = hr.read_uint();
  const long maxval = hr.read_uint();
  if (w <= 0 || h <= 0) throw DataError("PGM with non-positive extents");
  if (maxval <= 0 || maxval > 65535) throw DataError("PGM maxval out of range");
  // Exactly one whitespace byte separates the header from the raster.
  if (hr.pos_ >= bytes.size() || !std::isspace(bytes[hr.pos_])) throw DataError("malformed PGM header");
  std::size_t pos = hr.pos_ + 1;
  const std::size_t bps = maxval < 256 ? 1 : 2;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < n * bps) throw DataError("truncated PGM raster");
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned v = bytes[pos++];
    if (bps == 2) v = (v << 8) | bytes[pos++];
    if (v > static_cast<unsigned>(maxval)) throw DataError("PGM sample exceeds maxval");
    img.px[i] = static_cast<float>(v * scale);
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_pgm(const GrayImage& img, int bits) {
  if (bits != 8 && bits != 16) throw std::invalid_argument("PGM bit depth must be 8 or 16");
  if (img.empty()) throw ShapeError("cannot encode an empty image");
  const unsigned maxval = bits == 8 ? 255u : 65535u;
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" + std::to_string(maxval) + "\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + img.size() * (bits / 8));
  for (float v : img.px) {
    const double c = std::isfinite(v) ? std::clamp(static_cast<double>(v), 0.0, 1.0) : 0.0;
    const auto q = static_cast<unsigned>(std::lround(c * maxval));
    if (bits == 16) out.push_back(static_cast<unsigned char>(q >> 8));
    out.push_back(static_cast<unsigned char>(q & 0xffu));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img, int bits) {
  const auto bytes = encode_pgm(img, bits);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace tbc
