#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "raddet/inference.hpp"
#include "raddet/scene.hpp"

namespace raddet {

struct GroundTruth {
  int class_id = 0;
  double x = 0.0;  // metres
  double y = 0.0;
  std::optional<double> heading_rad;
};

GroundTruth ground_truth_from(const Annotation& a, const RadarGeometry& geometry);
std::vector<GroundTruth> ground_truth_from(const std::vector<Annotation>& anns, const RadarGeometry& geometry);

struct Assignment {
  std::vector<int> det_to_gt;    // same-class match per detection, -1 when FP
  std::vector<int> gt_to_det;    // -1 when FN
  std::vector<int> cross_class;  // for FP detections: nearest GT of another class within threshold, else -1
  std::vector<std::size_t> order;  // detection indices by descending confidence
};

/// Greedy matching in descending confidence to the nearest unmatched GT of the
/// same class within threshold_m.
Assignment match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, double threshold_m);

enum class ApInterpolation { all_point, eleven_point };

/// Area under the precision envelope. `tp` lists the detections of one class in
/// descending confidence order. Returns empty when n_gt is zero.
std::optional<double> average_precision(const std::vector<bool>& tp, std::size_t n_gt,
                                        ApInterpolation mode = ApInterpolation::all_point);

/// Smallest absolute angle between two headings, in [0, pi].
double angle_error(double a, double b);

inline constexpr std::array<double, 3> kHeadingBandsDeg{45.0, 22.5, 11.25};

struct FrameResult {
  std::vector<Detection> detections;
  std::vector<GroundTruth> ground_truth;
};

struct ThresholdReport {
  double threshold_m = 0.0;
  std::array<std::optional<double>, kNumClasses> ap{};
  std::optional<double> map;
  std::array<std::size_t, kNumClasses> tp{}, fp{}, fn{};
};

struct EvalReport {
  std::vector<ThresholdReport> thresholds;
  std::optional<double> rmse_m;  // over TPs at the loosest threshold
  double misclassification_rate = 0.0;
  std::array<double, 3> heading_acc{};  // fractions of TPs inside +-45, 22.5, 11.25 degrees
  std::size_t heading_count = 0;
  std::size_t frames = 0;

  const ThresholdReport& at(double threshold_m) const;
};

struct EvalConfig {
  std::vector<double> thresholds_m{2.0, 1.0};
  ApInterpolation interpolation = ApInterpolation::all_point;
};

EvalReport evaluate_frames(const std::vector<FrameResult>& frames, const EvalConfig& config = {});

nlohmann::json to_json(const EvalReport& r);
std::string csv_header();
/// One CSV line per threshold, tagged with a model label.
std::string csv_rows(const EvalReport& r, const std::string& model);
void write_report(const EvalReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const std::string& model);

}  // namespace raddet
