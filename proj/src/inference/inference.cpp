#include "raddet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "raddet/dataset.hpp"
#include "raddet/log.hpp"

namespace raddet {

std::vector<Peak> detect_peaks(std::span<const double> heatmap, int classes, int rows, int cols, int kernel,
                               double score_thresh) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("detect_peaks: kernel must be odd");
  if (heatmap.size() != static_cast<std::size_t>(classes) * rows * cols) {
    throw std::invalid_argument("detect_peaks: map holds " + std::to_string(heatmap.size()) + " values, expected " +
                                std::to_string(classes * rows * cols));
  }
  const int h = kernel / 2;
  std::vector<Peak> peaks;
  for (int k = 0; k < classes; ++k) {
    const double* m = heatmap.data() + static_cast<std::size_t>(k) * rows * cols;
    for (int r = 0; r < rows; ++r) {
      for (int a = 0; a < cols; ++a) {
        const double v = m[r * cols + a];
        if (!(v > score_thresh)) continue;
        bool peak = true;
        for (int i = std::max(0, r - h); peak && i <= std::min(rows - 1, r + h); ++i) {
          for (int j = std::max(0, a - h); j <= std::min(cols - 1, a + h); ++j) {
            const double u = m[i * cols + j];
            // an equal neighbour earlier in (r, a) order takes the peak
            if (u > v || (u == v && (i < r || (i == r && j < a)))) {
              peak = false;
              break;
            }
          }
        }
        if (peak) peaks.push_back({k, r, a, v});
      }
    }
  }
  return peaks;
}

std::vector<Detection> apply_offsets(const std::vector<Peak>& peaks, std::span<const double> offset,
                                     const RadarGeometry& g) {
  const std::size_t n = static_cast<std::size_t>(g.r_bins) * g.a_bins;
  if (offset.size() != 2 * n) throw std::invalid_argument("apply_offsets: offset map has the wrong size");
  std::vector<Detection> out;
  out.reserve(peaks.size());
  for (const auto& p : peaks) {
    const std::size_t idx = static_cast<std::size_t>(p.r) * g.a_bins + p.a;
    Detection d;
    d.class_id = p.class_id;
    d.confidence = p.score;
    d.r = std::clamp(p.r + 4.0 * offset[idx], 0.0, g.r_bins - 1.0);
    d.a = std::clamp(p.a + 4.0 * offset[n + idx], 0.0, g.a_bins - 1.0);
    std::tie(d.x, d.y) = polar_to_cartesian(g.bin_to_range(d.r), g.bin_to_azimuth(d.a));
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> dnms(std::vector<Detection> dets, double radius_m) {
  if (!(radius_m > 0.0)) throw std::invalid_argument("dnms: radius must be positive");
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return std::hypot(d.x - k.x, d.y - k.y) < radius_m;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::optional<double> decode_heading(const Detection& det, std::span<const double> heading, int rows, int cols) {
  const int qr = rows / 4, qc = cols / 4;
  const std::size_t n = static_cast<std::size_t>(qr) * qc;
  if (heading.size() != 2 * n) throw std::invalid_argument("decode_heading: heading map has the wrong size");
  const int r = std::clamp(static_cast<int>(std::floor(det.r / 4.0)), 0, qr - 1);
  const int c = std::clamp(static_cast<int>(std::floor(det.a / 4.0)), 0, qc - 1);
  const std::size_t idx = static_cast<std::size_t>(r) * qc + c;
  const double s = heading[idx], co = heading[n + idx];
  if (s == 0.0 && co == 0.0) return std::nullopt;
  return std::atan2(s, co);
}

std::vector<Detection> decode_maps(std::span<const double> heatmap, std::span<const double> offset,
                                   std::span<const double> heading, const RadarGeometry& g,
                                   const InferenceConfig& cfg) {
  const auto peaks = detect_peaks(heatmap, kNumClasses, g.r_bins, g.a_bins, cfg.kernel, cfg.score_thresh);
  auto dets = apply_offsets(peaks, offset, g);
  if (cfg.nms) dets = dnms(std::move(dets), cfg.nms_radius_m);
  std::size_t absent = 0;
  for (auto& d : dets) {
    d.heading_rad = decode_heading(d, heading, g.r_bins, g.a_bins);
    absent += !d.heading_rad;
  }
  if (absent) log_info(std::to_string(absent) + " detection(s) have no heading (zero sin/cos)");
  return dets;
}

std::vector<Detection> decode_targets(const TargetMaps& t, const RadarGeometry& g, const InferenceConfig& cfg) {
  return decode_maps(t.heatmap, t.offset, t.heading, g, cfg);
}

std::vector<std::vector<Detection>> decode_output(const NetworkOutput& out, const RadarGeometry& g,
                                                  const InferenceConfig& cfg) {
  const std::size_t N = out.heatmap.dim(0);
  const std::size_t hs = out.heatmap.numel() / N, os = out.offset.numel() / N, qs = out.heading.numel() / N;
  std::vector<std::vector<Detection>> res;
  for (std::size_t i = 0; i < N; ++i) {
    const auto src = out.offset.data().subspan(i * os, os);
    std::vector<double> off(src.begin(), src.end());
    for (auto& v : off) v = 2.0 * v - 1.0;
    res.push_back(decode_maps(out.heatmap.data().subspan(i * hs, hs), off, out.heading.data().subspan(i * qs, qs),
                              g, cfg));
  }
  return res;
}

nlohmann::json to_json(const Detection& d) {
  nlohmann::json j{{"class_id", d.class_id}, {"class", class_name(d.class_id)}, {"r_bin", d.r}, {"a_bin", d.a},
                   {"x_m", d.x},             {"y_m", d.y},                     {"confidence", d.confidence}};
  j["heading_rad"] = d.heading_rad ? nlohmann::json(*d.heading_rad) : nlohmann::json(nullptr);
  return j;
}

Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  d.class_id = j.at("class_id");
  d.r = j.at("r_bin");
  d.a = j.at("a_bin");
  d.x = j.at("x_m");
  d.y = j.at("y_m");
  d.confidence = j.at("confidence");
  if (j.contains("heading_rad") && !j.at("heading_rad").is_null()) d.heading_rad = j.at("heading_rad").get<double>();
  return d;
}

void write_detections(const std::filesystem::path& path, const std::vector<FrameDetections>& frames) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& f : frames) {
    for (const auto& d : f.detections) {
      auto j = to_json(d);
      j["frame"] = f.frame_id;
      out << j.dump() << '\n';
    }
  }
}

std::vector<FrameDetections> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<FrameDetections> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto id = j.at("frame").get<std::string>();
      if (frames.empty() || frames.back().frame_id != id) frames.push_back({id, {}});
      frames.back().detections.push_back(detection_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return frames;
}

}  // namespace raddet
