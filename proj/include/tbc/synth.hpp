#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tbc/image.hpp"

namespace tbc {

using FusionLocation = Box;

/// One training sample: observed image, target-only image, target count.
struct TrainingTuple {
  GrayImage f_d;
  GrayImage f_t;
  int y_t = 0;
  std::vector<Box> boxes;  ///< placed targets, one per counted fusion
  std::uint64_t seed_index = 0;
};

struct FuseResult {
  GrayImage fused;
  int fused_pixels = 0;
  bool success = false;  ///< fused_pixels > 1
};

/// Implants `t`, resized to the box, scaled by alpha: every box pixel becomes
/// max(f_B, alpha * t). The caller supplies alpha.
FuseResult fuse_with_alpha(const GrayImage& f_b, const GrayImage& t, const Box& loc, double alpha);
/// As above with alpha ~ U[0.75, 1] drawn from `rng`.
FuseResult fuse_one(const GrayImage& f_b, const GrayImage& t, const Box& loc, Rng& rng);

/// Isotropic Gaussian, peak `amplitude` at the center of an extent x extent
/// grid (extent odd), clamped to [0,1].
GrayImage gaussian_template(double sigma, double amplitude, int extent = 15);

/// Built-in clutter: bicubic-interpolated value noise on an 8-px lattice plus a
/// random linear ramp, rescaled to [lo, lo + span].
struct BackgroundParams {
  double lo_min = 0.02;
  double lo_max = 0.12;
  double span_min = 0.05;
  double span_max = 0.15;
  int lattice = 8;
  double ramp = 0.5;
};

GrayImage make_background(int width, int height, Rng& rng, const BackgroundParams& p = {});

struct SynthConfig {
  int width = 64;
  int height = 64;
  int classes = 4;  ///< labels 0..classes-1
  int min_extent = 2;
  int max_extent = 10;
  int margin = 2;          ///< minimum gap between boxes
  int place_attempts = 100;
  int tuple_attempts = 64;  ///< retries until a tuple reaches its requested count
  double alpha_lo = 0.75;
  double alpha_hi = 1.0;
  BackgroundParams background;
  std::vector<double> template_sigmas{3.5};
  std::vector<double> template_amplitudes{0.9, 1.0};
  int template_extent = 15;
};

/// Gaussian templates for every (sigma, amplitude) pair of the config.
std::vector<GrayImage> builtin_templates(const SynthConfig& cfg);
/// Every .pgm file in `dir`, in lexicographic order.
std::vector<GrayImage> load_image_dir(const std::filesystem::path& dir);

/// Fuses up to n_t targets at disjoint random boxes. y_T counts the fusions
/// that succeeded and formed a single connected blob; the others are reverted.
/// Throws DataError when a box cannot be placed.
TrainingTuple make_tuple(const GrayImage& f_b, int n_t, const std::vector<GrayImage>& templates, Rng& rng,
                         const SynthConfig& cfg);
/// (f_B, 0, 0)
TrainingTuple make_negative(const GrayImage& f_b);

/// Background provider: built-in generator when `images` is empty, otherwise
/// random crops of the given images.
struct BackgroundSource {
  std::vector<GrayImage> images;
  GrayImage draw(int width, int height, Rng& rng, const BackgroundParams& p) const;
};

struct Dataset {
  std::vector<TrainingTuple> tuples;
  std::size_t skipped = 0;  ///< requested tuples that never reached their count

  std::vector<int> histogram(int classes) const;
};

/// Emits counts[c] tuples with label c (in a seeded shuffled order). Tuple i
/// draws from Rng::derive(seed, i), so the result is independent of `workers`.
Dataset make_dataset(const BackgroundSource& backgrounds, const std::vector<int>& counts, std::uint64_t seed,
                     const SynthConfig& cfg, const std::vector<GrayImage>& templates, int workers = 1);

/// Number of 8-connected components of pixels > 0.
int count_components(const GrayImage& img);

// --- on-disk datasets -------------------------------------------------------
//
// <dir>/manifest.jsonl holds one object per tuple:
//   {"f_D": "...pgm", "f_T": "...pgm", "y_T": n, "boxes": [[x0,y0,h0,w0],...], "seed_index": i}
// with paths relative to the manifest. Images are 16-bit PGM.

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& manifest);

}  // namespace tbc
