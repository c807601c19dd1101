#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tbc/detect.hpp"
#include "tbc/image.hpp"

namespace tbc {

inline constexpr double kMatchRadius = 2.0;
inline constexpr double kStabilizer = 0.01;
inline constexpr int kRingWidth = 5;

/// Target boxes of one frame.
using GroundTruth = std::vector<Box>;

struct MatchResult {
  int true_detections = 0;
  long long false_pixels = 0;
  std::vector<int> target_of;  ///< per detection: matched target index or -1
};

/// A detection may claim a target when its centroid lies in the target box
/// grown by `radius`. Each target is claimed at most once; the assignment
/// maximizes the number of claimed targets, then minimizes the pixels left to
/// unmatched detections, which are all counted as false pixels.
MatchResult match_and_score(const std::vector<Detection>& detections, const GroundTruth& gt,
                            double radius = kMatchRadius);

struct RocPoint {
  double threshold = 0.0;
  double fa = 0.0;
  double pd = 0.0;
  long long true_detections = 0;
  long long false_pixels = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  ///< ascending threshold
  long long total_targets = 0;
  long long total_pixels = 0;

  /// Highest Pd among points with Fa <= max_fa (0 if none).
  double pd_at(double max_fa) const;
};

/// Fixed thresholds applied to min-max normalized score images (mask = v > T).
RocCurve roc(const std::vector<GrayImage>& scores, const std::vector<GroundTruth>& gts,
             const std::vector<double>& thresholds, double radius = kMatchRadius);
/// Adaptive thresholds T = mean + k * stddev for each k.
RocCurve roc_adaptive(const std::vector<GrayImage>& scores, const std::vector<GroundTruth>& gts,
                      const std::vector<double>& ks, double radius = kMatchRadius);

// --- contrast metrics ---------------------------------------------------------
//
// SCR = |M_t - m_b| / (sigma_b + lambda), M_t the box maximum, m_b and sigma_b
// the mean and population deviation of the 5-px ring around the box.
// SCRG = SCR_out / (SCR_in + lambda), BSF = sigma_in / (sigma_out + lambda).
// lambda = 0 is the strict mode: a zero denominator throws NumericalError.

double scr(const GrayImage& img, const Box& box, double lambda = kStabilizer);
double scrg(const GrayImage& in, const GrayImage& out, const Box& box, double lambda = kStabilizer);
double bsf(const GrayImage& in, const GrayImage& out, const Box& box, double lambda = kStabilizer);

// --- baselines ----------------------------------------------------------------

/// img - dilate(erode(img)) with a flat se x se square, replicate border.
GrayImage tophat(const GrayImage& img, int se = 5);
/// img - max over the horizontal, vertical and two diagonal w-sample line
/// means (or medians) centered on each pixel, replicate border.
GrayImage max_mean(const GrayImage& img, int w = 15);
GrayImage max_median(const GrayImage& img, int w = 15);

// --- output -----------------------------------------------------------------

/// Header row, then one row per point; reals printed with %.6g.
void write_roc_csv(std::ostream& out, const RocCurve& curve);
std::string format_g6(double v);

/// Plots Pd against log10(Fa) as a light-on-dark raster.
GrayImage render_roc(const RocCurve& curve, int width = 320, int height = 240);

}  // namespace tbc
