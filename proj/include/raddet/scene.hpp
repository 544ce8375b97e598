#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "raddet/rng.hpp"

namespace raddet {

inline constexpr int kNumClasses = 3;  // 0 pedestrian, 1 cyclist, 2 car

const char* class_name(int class_id);

struct RadarGeometry {
  int r_bins = 64;
  int a_bins = 64;
  int d_bins = 16;
  double r_max_m = 50.0;
  double fov_deg = 180.0;
  double v_max_mps = 13.0;

  double range_res() const { return r_max_m / r_bins; }
  double azimuth_res_rad() const;  // radians per angle bin
  double fov_rad() const;

  // Continuous bin coordinates. Range bin u covers [u*res, (u+1)*res) with
  // the target at u = r/res; azimuth 0 sits on column a_bins/2.
  double range_to_bin(double range_m) const { return range_m / range_res(); }
  double bin_to_range(double u) const { return u * range_res(); }
  double azimuth_to_bin(double az_rad) const;
  double bin_to_azimuth(double v) const;
  double velocity_to_bin(double v_radial) const;
  double bin_to_velocity(double w) const;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;

  bool operator==(const RadarGeometry&) const = default;
};

struct SceneObject {
  int class_id = 0;
  double range_m = 0.0;
  double azimuth_rad = 0.0;
  double vx = 0.0;  // m/s, +x toward increasing azimuth
  double vy = 0.0;  // m/s, +y downrange
  double rcs_amp = 1.0;
  double sigma_r = 1.0;  // bins, before range inflation
  double sigma_a = 1.0;  // bins, before angular smear
  double sigma_d = 1.0;  // Doppler bins
};

/// Object with the class default amplitude and spread.
SceneObject make_object(int class_id, double range_m, double azimuth_rad, double vx = 0.0, double vy = 0.0);

// Integer bin rectangle, inclusive: {row0, col0, row1, col1}.
using BinBox = std::array<int, 4>;

struct Annotation {
  int class_id = 0;
  double center_r = 0.0;  // bins
  double center_a = 0.0;
  BinBox box_ra{};
  BinBox box_rd{};
  double heading_rad = 0.0;

  bool operator==(const Annotation&) const = default;
};

struct RadarFrame {
  RadarGeometry geometry;
  int frame_index = 0;
  std::vector<float> ra;  // r_bins x a_bins
  std::vector<float> rd;  // r_bins x d_bins
  std::vector<float> ad;  // a_bins x d_bins
};

/// Snaps a bin coordinate to the 2^-16 grid used for all annotation centers.
double quantize_bin(double v);

std::pair<double, double> polar_to_cartesian(double range_m, double azimuth_rad);
std::pair<double, double> cartesian_to_polar(double x, double y);

/// Renders the three magnitude views of a scene plus its annotations.
/// Throws std::invalid_argument listing any object out of bounds.
std::pair<RadarFrame, std::vector<Annotation>> render_frame(const std::vector<SceneObject>& scene,
                                                            const RadarGeometry& geometry, double noise_sigma,
                                                            std::uint64_t rng_seed, int frame_index = 0);

/// Effective RA spread of an object after range and angle inflation.
std::pair<double, double> effective_spread(const SceneObject& obj, double r_max_m);

bool in_bounds(const SceneObject& obj, const RadarGeometry& geometry);

/// Constant-velocity step in Cartesian space. Objects that leave the field of
/// view are dropped and their indices appended to `dropped` when given.
std::vector<SceneObject> advance_scene(const std::vector<SceneObject>& scene, double dt, const RadarGeometry& geometry,
                                       std::vector<std::size_t>* dropped = nullptr);

struct SpeedBand {
  double lo = 0.0;
  double hi = 0.0;
};

struct SimConfig {
  RadarGeometry geometry;
  std::array<int, kNumClasses> counts{1, 1, 1};  // objects per scene
  int frames_per_sequence = 5;
  int n_sequences = 10;
  double dt = 0.1;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  std::array<SpeedBand, kNumClasses> speed{SpeedBand{0.5, 2.0}, SpeedBand{2.0, 6.0}, SpeedBand{3.0, 12.0}};
  // All classes get the car's amplitude and spread so only Doppler separates them.
  bool shared_signature = false;
  // Velocity direction within this many radians of the radial direction; <0 means any.
  double max_heading_dev_rad = -1.0;
  double min_separation_m = 4.0;
  double min_separation_bins = 6.0;
};

/// Object layouts for one sequence: scenes[t] is the scene at frame t.
std::vector<std::vector<SceneObject>> simulate_sequence(const SimConfig& config, Rng& rng);

}  // namespace raddet
