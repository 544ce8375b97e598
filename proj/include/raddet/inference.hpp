#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "raddet/labeling.hpp"
#include "raddet/model.hpp"
#include "raddet/scene.hpp"

namespace raddet {

struct InferenceConfig {
  int kernel = 5;
  double score_thresh = 0.1;
  double nms_radius_m = 1.0;
  bool nms = true;
};

struct Peak {
  int class_id = 0;
  int r = 0;
  int a = 0;
  double score = 0.0;
};

struct Detection {
  int class_id = 0;
  double r = 0.0;  // fractional bins after offset correction
  double a = 0.0;
  double x = 0.0;  // metres
  double y = 0.0;
  double confidence = 0.0;
  std::optional<double> heading_rad;
};

/// Strict local maxima of each class channel of a [classes,rows,cols] map.
/// Equal neighbours are resolved in favour of the lower (r, a).
std::vector<Peak> detect_peaks(std::span<const double> heatmap, int classes, int rows, int cols, int kernel = 5,
                               double score_thresh = 0.1);

/// Shifts peaks by 4x the decoded offsets ([2,rows,cols], values in [-1,1]) and
/// fills Cartesian positions.
std::vector<Detection> apply_offsets(const std::vector<Peak>& peaks, std::span<const double> offset,
                                     const RadarGeometry& geometry);

/// Greedy distance-based suppression, class-agnostic.
std::vector<Detection> dnms(std::vector<Detection> detections, double radius_m = 1.0);

/// Heading from quarter-resolution (sin, cos) maps at the detection's cell;
/// empty when both values are zero.
std::optional<double> decode_heading(const Detection& det, std::span<const double> heading, int rows, int cols);

/// Full decode of one frame's maps. Offsets are already in [-1,1].
std::vector<Detection> decode_maps(std::span<const double> heatmap, std::span<const double> offset,
                                   std::span<const double> heading, const RadarGeometry& geometry,
                                   const InferenceConfig& config = {});

std::vector<Detection> decode_targets(const TargetMaps& targets, const RadarGeometry& geometry,
                                      const InferenceConfig& config = {});

/// Decodes every sample of a network batch.
std::vector<std::vector<Detection>> decode_output(const NetworkOutput& out, const RadarGeometry& geometry,
                                                  const InferenceConfig& config = {});

nlohmann::json to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);

struct FrameDetections {
  std::string frame_id;
  std::vector<Detection> detections;
};

/// One JSON object per line, each tagged with its frame id.
void write_detections(const std::filesystem::path& path, const std::vector<FrameDetections>& frames);
std::vector<FrameDetections> read_detections(const std::filesystem::path& path);

}  // namespace raddet
