#include "raddet/scene.hpp"

#include "raddet/log.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace raddet {

namespace {

constexpr double kMinRange = 5.0;
constexpr double kMaxSmear = 3.0;

struct ClassDefaults {
  double amp, sigma_r, sigma_a, sigma_d;
};

constexpr ClassDefaults kDefaults[kNumClasses] = {
    {0.4, 1.0, 1.5, 1.0},
    {0.6, 1.5, 2.0, 1.0},
    {1.0, 2.0, 3.5, 1.0},
};

void add_blob(std::vector<float>& map, int rows, int cols, double mu_r, double mu_c, double sr, double sc,
              double amp) {
  for (int i = 0; i < rows; ++i) {
    const double dr = (i - mu_r) / sr;
    for (int j = 0; j < cols; ++j) {
      const double dc = (j - mu_c) / sc;
      const double v = amp * std::exp(-0.5 * (dr * dr + dc * dc));
      map[static_cast<std::size_t>(i) * cols + j] += static_cast<float>(v);
    }
  }
}

BinBox box_3sigma(double mu_r, double mu_c, double sr, double sc, int rows, int cols) {
  return {std::max(0, static_cast<int>(std::floor(mu_r - 3.0 * sr))),
          std::max(0, static_cast<int>(std::floor(mu_c - 3.0 * sc))),
          std::min(rows - 1, static_cast<int>(std::ceil(mu_r + 3.0 * sr))),
          std::min(cols - 1, static_cast<int>(std::ceil(mu_c + 3.0 * sc)))};
}

std::string describe(const SceneObject& o) {
  std::ostringstream os;
  os << class_name(o.class_id) << " at range " << o.range_m << " m, azimuth " << o.azimuth_rad << " rad";
  return os.str();
}

SceneObject step_object(SceneObject o, double dt) {
  auto [x, y] = polar_to_cartesian(o.range_m, o.azimuth_rad);
  x += o.vx * dt;
  y += o.vy * dt;
  std::tie(o.range_m, o.azimuth_rad) = cartesian_to_polar(x, y);
  return o;
}

}  // namespace

const char* class_name(int class_id) {
  switch (class_id) {
    case 0: return "pedestrian";
    case 1: return "cyclist";
    case 2: return "car";
    default: return "unknown";
  }
}

double RadarGeometry::fov_rad() const { return fov_deg * std::numbers::pi / 180.0; }
double RadarGeometry::azimuth_res_rad() const { return fov_rad() / a_bins; }
double RadarGeometry::azimuth_to_bin(double az_rad) const { return a_bins / 2.0 + az_rad / azimuth_res_rad(); }
double RadarGeometry::bin_to_azimuth(double v) const { return (v - a_bins / 2.0) * azimuth_res_rad(); }

double RadarGeometry::velocity_to_bin(double v_radial) const {
  return (v_radial + v_max_mps) / (2.0 * v_max_mps) * (d_bins - 1);
}

double RadarGeometry::bin_to_velocity(double w) const {
  return w / (d_bins - 1) * (2.0 * v_max_mps) - v_max_mps;
}

void RadarGeometry::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("geometry: " + what); };
  if (r_bins < 8) fail("r_bins must be >= 8, got " + std::to_string(r_bins));
  if (a_bins < 8) fail("a_bins must be >= 8, got " + std::to_string(a_bins));
  if (d_bins < 8) fail("d_bins must be >= 8, got " + std::to_string(d_bins));
  if (!(r_max_m > kMinRange)) fail("r_max_m must exceed 5 m");
  if (!(fov_deg > 0.0 && fov_deg <= 360.0)) fail("fov_deg must be in (0, 360]");
  if (!(v_max_mps > 0.0)) fail("v_max_mps must be positive");
}

SceneObject make_object(int class_id, double range_m, double azimuth_rad, double vx, double vy) {
  if (class_id < 0 || class_id >= kNumClasses) {
    throw std::invalid_argument("class_id " + std::to_string(class_id) + " is not 0, 1 or 2");
  }
  const auto& d = kDefaults[class_id];
  SceneObject o;
  o.class_id = class_id;
  o.range_m = range_m;
  o.azimuth_rad = azimuth_rad;
  o.vx = vx;
  o.vy = vy;
  o.rcs_amp = d.amp;
  o.sigma_r = d.sigma_r;
  o.sigma_a = d.sigma_a;
  o.sigma_d = d.sigma_d;
  return o;
}

double quantize_bin(double v) { return std::round(v * 65536.0) / 65536.0; }

std::pair<double, double> polar_to_cartesian(double range_m, double azimuth_rad) {
  return {range_m * std::sin(azimuth_rad), range_m * std::cos(azimuth_rad)};
}

std::pair<double, double> cartesian_to_polar(double x, double y) { return {std::hypot(x, y), std::atan2(x, y)}; }

std::pair<double, double> effective_spread(const SceneObject& obj, double r_max_m) {
  const double sr = obj.sigma_r * (1.0 + obj.range_m / r_max_m);
  const double sa = obj.sigma_a * std::min(kMaxSmear, 1.0 / std::max(1e-12, std::cos(obj.azimuth_rad)));
  return {sr, sa};
}

// The bin grid is narrower than the physical limits at the far edges: the
// centre must land inside the last range row and the last angle column.
bool in_bounds(const SceneObject& obj, const RadarGeometry& g) {
  if (!(obj.range_m >= kMinRange && obj.range_m <= g.r_max_m)) return false;
  if (!(std::abs(obj.azimuth_rad) <= g.fov_rad() / 2.0)) return false;
  const double u = g.range_to_bin(obj.range_m);
  const double v = g.azimuth_to_bin(obj.azimuth_rad);
  return u <= g.r_bins - 1 && v >= 0.0 && v <= g.a_bins - 1;
}

std::pair<RadarFrame, std::vector<Annotation>> render_frame(const std::vector<SceneObject>& scene,
                                                            const RadarGeometry& g, double noise_sigma,
                                                            std::uint64_t rng_seed, int frame_index) {
  g.validate();
  std::string bad;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!in_bounds(scene[i], g) || scene[i].class_id < 0 || scene[i].class_id >= kNumClasses) {
      bad += (bad.empty() ? "" : "; ") + std::string("object ") + std::to_string(i) + " (" + describe(scene[i]) + ")";
    }
  }
  if (!bad.empty()) throw std::invalid_argument("render_frame: out of bounds: " + bad);

  const int R = g.r_bins, A = g.a_bins, D = g.d_bins;
  RadarFrame frame;
  frame.geometry = g;
  frame.frame_index = frame_index;
  frame.ra.assign(static_cast<std::size_t>(R) * A, 0.0f);
  frame.rd.assign(static_cast<std::size_t>(R) * D, 0.0f);
  frame.ad.assign(static_cast<std::size_t>(A) * D, 0.0f);

  std::vector<Annotation> annotations;
  for (const auto& o : scene) {
    const auto [sr, sa] = effective_spread(o, g.r_max_m);
    const double u = quantize_bin(g.range_to_bin(o.range_m));
    const double v = quantize_bin(g.azimuth_to_bin(o.azimuth_rad));
    const double v_radial = o.vx * std::sin(o.azimuth_rad) + o.vy * std::cos(o.azimuth_rad);
    const double w = quantize_bin(std::clamp(g.velocity_to_bin(v_radial), 0.0, D - 1.0));

    add_blob(frame.ra, R, A, u, v, sr, sa, o.rcs_amp);
    add_blob(frame.rd, R, D, u, w, sr, o.sigma_d, o.rcs_amp);
    add_blob(frame.ad, A, D, v, w, sa, o.sigma_d, o.rcs_amp);

    Annotation ann;
    ann.class_id = o.class_id;
    ann.center_r = u;
    ann.center_a = v;
    ann.box_ra = box_3sigma(u, v, sr, sa, R, A);
    ann.box_rd = box_3sigma(u, w, sr, o.sigma_d, R, D);
    ann.heading_rad = std::atan2(o.vx, o.vy);
    annotations.push_back(ann);
  }

  if (noise_sigma > 0.0) {
    Rng rng(rng_seed);
    for (auto* map : {&frame.ra, &frame.rd, &frame.ad}) {
      for (auto& x : *map) x += static_cast<float>(std::abs(noise_sigma * rng.normal()));
    }
  }
  return {std::move(frame), std::move(annotations)};
}

std::vector<SceneObject> advance_scene(const std::vector<SceneObject>& scene, double dt, const RadarGeometry& g,
                                       std::vector<std::size_t>* dropped) {
  if (!(dt > 0.0)) throw std::invalid_argument("advance_scene: dt must be positive");
  std::vector<SceneObject> out;
  out.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const SceneObject o = step_object(scene[i], dt);
    if (in_bounds(o, g)) {
      out.push_back(o);
    } else {
      log_warn("advance_scene: dropped " + describe(o) + " (left the field of view)");
      if (dropped) dropped->push_back(i);
    }
  }
  return out;
}

std::vector<std::vector<SceneObject>> simulate_sequence(const SimConfig& cfg, Rng& rng) {
  const auto& g = cfg.geometry;
  g.validate();
  const int T = std::max(1, cfg.frames_per_sequence);
  const double r_lo = kMinRange + 1.0;
  const double r_hi = std::min(g.r_max_m, g.bin_to_range(g.r_bins - 1)) - 1.0;
  const double a_margin = 3.0 * g.azimuth_res_rad();
  const double a_lo = g.bin_to_azimuth(0.0) + a_margin;
  const double a_hi = g.bin_to_azimuth(g.a_bins - 1.0) - a_margin;

  // Trajectory of each placed object, frame by frame.
  std::vector<std::vector<SceneObject>> tracks;
  auto trajectory = [&](SceneObject o) {
    std::vector<SceneObject> track{o};
    for (int t = 1; t < T; ++t) {
      track.push_back(step_object(track.back(), cfg.dt));
    }
    for (const auto& s : track) {
      if (s.range_m < r_lo || s.range_m > r_hi || s.azimuth_rad < a_lo || s.azimuth_rad > a_hi) return std::vector<SceneObject>{};
    }
    return track;
  };
  auto separated = [&](const std::vector<SceneObject>& cand) {
    for (const auto& other : tracks) {
      for (int t = 0; t < T; ++t) {
        const auto [x0, y0] = polar_to_cartesian(cand[t].range_m, cand[t].azimuth_rad);
        const auto [x1, y1] = polar_to_cartesian(other[t].range_m, other[t].azimuth_rad);
        if (std::hypot(x0 - x1, y0 - y1) < cfg.min_separation_m) return false;
        const double du = g.range_to_bin(cand[t].range_m) - g.range_to_bin(other[t].range_m);
        const double dv = g.azimuth_to_bin(cand[t].azimuth_rad) - g.azimuth_to_bin(other[t].azimuth_rad);
        if (std::hypot(du, dv) < cfg.min_separation_bins) return false;
      }
    }
    return true;
  };

  for (int c = 0; c < kNumClasses; ++c) {
    for (int k = 0; k < cfg.counts[c]; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
        const double r = rng.uniform(r_lo, r_hi);
        const double az = rng.uniform(a_lo, a_hi);
        const double speed = rng.uniform(cfg.speed[c].lo, cfg.speed[c].hi);
        double dir;
        if (cfg.max_heading_dev_rad >= 0.0) {
          dir = az + (rng.bernoulli(0.5) ? 0.0 : std::numbers::pi) +
                rng.uniform(-cfg.max_heading_dev_rad, cfg.max_heading_dev_rad);
        } else {
          dir = rng.uniform(-std::numbers::pi, std::numbers::pi);
        }
        SceneObject o = make_object(c, r, az, speed * std::sin(dir), speed * std::cos(dir));
        if (cfg.shared_signature) {
          const auto car = make_object(2, r, az);
          o.rcs_amp = car.rcs_amp;
          o.sigma_r = car.sigma_r;
          o.sigma_a = car.sigma_a;
          o.sigma_d = car.sigma_d;
        }
        auto track = trajectory(o);
        if (track.empty() || !separated(track)) continue;
        tracks.push_back(std::move(track));
        placed = true;
      }
      if (!placed) {
        throw std::runtime_error(std::string("simulate_sequence: could not place a ") + class_name(c) +
                                 " after 2000 attempts; reduce object counts or separation");
      }
    }
  }

  std::vector<std::vector<SceneObject>> scenes(T);
  for (int t = 0; t < T; ++t) {
    for (const auto& tr : tracks) scenes[t].push_back(tr[t]);
  }
  return scenes;
}

}  // namespace raddet
