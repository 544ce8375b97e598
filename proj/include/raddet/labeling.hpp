#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "raddet/rng.hpp"
#include "raddet/scene.hpp"

namespace raddet {

inline constexpr double kSigmaMin = 0.5;
inline constexpr double kRhoMax = 0.99;

struct BivariateParams {
  double mu_r = 0.0;
  double mu_a = 0.0;
  double sigma_r = kSigmaMin;
  double sigma_a = kSigmaMin;
  double rho = 0.0;
};

enum class FitMethod { log_quadratic, moments, degenerate };

/// Estimates the Gaussian parameters of the blob inside `box` of an RA map.
/// The crop is normalised by its maximum and bins below `mask_threshold`
/// are discarded. Surviving bins are fitted with an intensity-weighted
/// quadratic in log space; when that fit is ill-posed the truncation-corrected
/// weighted moments are used, and an empty mask falls back to the box centre.
BivariateParams bivariate_from_spectrum(std::span<const float> ra, int rows, int cols, const BinBox& box,
                                        double mask_threshold = 0.5, FitMethod* method = nullptr);

/// Gaussian of `p` on the bin grid, scaled so the largest cell is 1, with
/// cells beyond Mahalanobis distance 4 set to 0.
std::vector<double> render_bivariate(const BivariateParams& p, int rows, int cols);

/// Unnormalised bivariate normal density on the bin grid.
std::vector<double> bivariate_density(const BivariateParams& p, int rows, int cols);

std::vector<double> render_plain_gaussian(double mu_r, double mu_a, double sigma_bins, int rows, int cols);

/// Index of the cell nearest to continuous coordinate `mu` on an axis of `n`
/// cells; exact half-way ties go toward the axis centre.
int nearest_cell(double mu, int n);

enum class LabelMode { bivariate, gaussian };

LabelMode parse_label_mode(const std::string& s);
const char* to_string(LabelMode mode);

struct LabelConfig {
  LabelMode mode = LabelMode::bivariate;
  double mask_threshold = 0.5;
  int offset_patch = 9;
};

/// Training targets for one frame. Flat row-major buffers:
/// heatmap [3,R,A], offset [2,R,A], offset_mask [R,A], heading [2,R/4,A/4],
/// heading_mask [R/4,A/4].
struct TargetMaps {
  int rows = 0;
  int cols = 0;
  std::vector<double> heatmap;
  std::vector<double> offset;
  std::vector<double> offset_mask;
  std::vector<double> heading;
  std::vector<double> heading_mask;

  bool operator==(const TargetMaps&) const = default;
};

TargetMaps empty_targets(int rows, int cols);

/// Normalised sub-bin offsets in a patch around each annotation centre.
/// Where patches overlap the cell goes to the nearer centre.
void offset_targets(const std::vector<Annotation>& annotations, int rows, int cols, int patch,
                    std::vector<double>& offset, std::vector<double>& mask);

/// (sin, cos) of the heading on the quarter-resolution grid, 3x3 patch.
void heading_targets(const std::vector<Annotation>& annotations, int rows, int cols, std::vector<double>& heading,
                     std::vector<double>& mask);

/// Full target synthesis for one frame.
TargetMaps make_targets(const RadarFrame& frame, const std::vector<Annotation>& annotations,
                        const LabelConfig& config = {});

struct TrajectorySample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

/// Heading at each sample from the derivative of a natural cubic spline
/// through x(t) and y(t).
std::vector<double> heading_from_trajectory(std::span<const TrajectorySample> samples);

// Mirrors the angle axis: column j becomes cols-1-j.
void flip_frame(RadarFrame& frame);
void flip_targets(TargetMaps& targets);
Annotation flip_annotation(const Annotation& a, int cols);

struct AugmentConfig {
  double p_noise = 0.5;
  double noise_scale = 0.02;  // multiple of the per-map standard deviation
  double p_flip = 0.5;
};

void augment(RadarFrame& frame, TargetMaps& targets, std::vector<Annotation>& annotations, Rng& rng,
             const AugmentConfig& config = {});
/// Same draw for a stack of frames: one flip decision for all of them, noise
/// added to every frame.
void augment(std::vector<RadarFrame>& stack, TargetMaps& targets, std::vector<Annotation>& annotations, Rng& rng,
             const AugmentConfig& config = {});

}  // namespace raddet
