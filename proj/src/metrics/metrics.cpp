#include "raddet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "raddet/dataset.hpp"
#include "raddet/log.hpp"

namespace raddet {

GroundTruth ground_truth_from(const Annotation& a, const RadarGeometry& g) {
  GroundTruth gt;
  gt.class_id = a.class_id;
  std::tie(gt.x, gt.y) = polar_to_cartesian(g.bin_to_range(a.center_r), g.bin_to_azimuth(a.center_a));
  gt.heading_rad = a.heading_rad;
  return gt;
}

std::vector<GroundTruth> ground_truth_from(const std::vector<Annotation>& anns, const RadarGeometry& g) {
  std::vector<GroundTruth> out;
  out.reserve(anns.size());
  for (const auto& a : anns) out.push_back(ground_truth_from(a, g));
  return out;
}

Assignment match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, double threshold_m) {
  Assignment as;
  as.det_to_gt.assign(dets.size(), -1);
  as.gt_to_det.assign(gts.size(), -1);
  as.cross_class.assign(dets.size(), -1);
  as.order.resize(dets.size());
  std::iota(as.order.begin(), as.order.end(), 0);
  std::stable_sort(as.order.begin(), as.order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  for (std::size_t i : as.order) {
    const auto& d = dets[i];
    int best = -1, nearest = -1;
    double best_d = threshold_m, nearest_d = threshold_m;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double dist = std::hypot(d.x - gts[j].x, d.y - gts[j].y);
      if (dist <= nearest_d && (nearest < 0 || dist < nearest_d)) {
        nearest = static_cast<int>(j);
        nearest_d = dist;
      }
      if (gts[j].class_id != d.class_id || as.gt_to_det[j] >= 0) continue;
      if (dist <= best_d && (best < 0 || dist < best_d)) {
        best = static_cast<int>(j);
        best_d = dist;
      }
    }
    if (best >= 0) {
      as.det_to_gt[i] = best;
      as.gt_to_det[best] = static_cast<int>(i);
    } else if (nearest >= 0 && gts[nearest].class_id != d.class_id) {
      as.cross_class[i] = nearest;
    }
  }
  return as;
}

std::optional<double> average_precision(const std::vector<bool>& tp, std::size_t n_gt, ApInterpolation mode) {
  if (n_gt == 0) return std::nullopt;
  const std::size_t n = tp.size();
  std::vector<long double> prec(n);
  std::vector<double> rec(n);
  std::size_t ctp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ctp += tp[i];
    prec[i] = static_cast<long double>(ctp) / static_cast<long double>(i + 1);
    rec[i] = static_cast<double>(ctp) / static_cast<double>(n_gt);
  }
  // precision envelope: best precision at any recall >= this one
  for (std::size_t i = n; i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  if (mode == ApInterpolation::eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (rec[i] >= r - 1e-12) {
          p = static_cast<double>(prec[i]);
          break;
        }
      }
      ap += p;
    }
    return ap / 11.0;
  }
  // Each true positive raises recall by 1/n_gt, so the area is the mean
  // envelope precision at those steps.
  long double area = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp[i]) area += prec[i];
  }
  return static_cast<double>(area / static_cast<long double>(n_gt));
}

double angle_error(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2.0 * std::numbers::pi);
  return d > std::numbers::pi ? 2.0 * std::numbers::pi - d : d;
}

const ThresholdReport& EvalReport::at(double threshold_m) const {
  for (const auto& t : thresholds) {
    if (std::abs(t.threshold_m - threshold_m) < 1e-12) return t;
  }
  throw std::out_of_range("no evaluation at threshold " + std::to_string(threshold_m));
}

EvalReport evaluate_frames(const std::vector<FrameResult>& frames, const EvalConfig& cfg) {
  if (cfg.thresholds_m.empty()) throw std::invalid_argument("evaluate: no thresholds");
  EvalReport rep;
  rep.frames = frames.size();
  const double loosest = *std::max_element(cfg.thresholds_m.begin(), cfg.thresholds_m.end());

  for (double thr : cfg.thresholds_m) {
    ThresholdReport tr;
    tr.threshold_m = thr;
    struct Scored {
      double conf;
      std::size_t frame, det;
      bool tp;
    };
    std::array<std::vector<Scored>, kNumClasses> scored;
    std::array<std::size_t, kNumClasses> n_gt{};
    std::size_t tp_all = 0, cross = 0;
    double se = 0.0;
    std::array<std::size_t, 3> in_band{};
    std::size_t n_heading = 0;

    for (std::size_t f = 0; f < frames.size(); ++f) {
      const auto& fr = frames[f];
      for (const auto& g : fr.ground_truth) ++n_gt.at(static_cast<std::size_t>(g.class_id));
      const auto as = match(fr.detections, fr.ground_truth, thr);
      for (std::size_t i = 0; i < fr.detections.size(); ++i) {
        const auto& d = fr.detections[i];
        const auto k = static_cast<std::size_t>(d.class_id);
        const bool tp = as.det_to_gt[i] >= 0;
        scored.at(k).push_back({d.confidence, f, i, tp});
        (tp ? tr.tp : tr.fp)[k]++;
        cross += as.cross_class[i] >= 0;
        if (!tp) continue;
        ++tp_all;
        const auto& g = fr.ground_truth[static_cast<std::size_t>(as.det_to_gt[i])];
        se += (d.x - g.x) * (d.x - g.x) + (d.y - g.y) * (d.y - g.y);
        if (g.heading_rad) {
          ++n_heading;
          if (d.heading_rad) {
            const double err = angle_error(*d.heading_rad, *g.heading_rad) * 180.0 / std::numbers::pi;
            for (std::size_t b = 0; b < 3; ++b) in_band[b] += err <= kHeadingBandsDeg[b] + 1e-9;
          }
        }
      }
      for (std::size_t j = 0; j < fr.ground_truth.size(); ++j) {
        if (as.gt_to_det[j] < 0) tr.fn[static_cast<std::size_t>(fr.ground_truth[j].class_id)]++;
      }
    }

    double sum_ap = 0.0;
    int classes = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      auto& s = scored[k];
      std::stable_sort(s.begin(), s.end(), [](const Scored& a, const Scored& b) { return a.conf > b.conf; });
      std::vector<bool> tp;
      tp.reserve(s.size());
      for (const auto& x : s) tp.push_back(x.tp);
      tr.ap[k] = average_precision(tp, n_gt[k], cfg.interpolation);
      if (tr.ap[k]) {
        sum_ap += *tr.ap[k];
        ++classes;
      } else if (thr == loosest) {
        log_warn(std::string("no ground truth for class ") + class_name(static_cast<int>(k)) +
                 "; it is left out of mAP");
      }
    }
    if (classes) tr.map = sum_ap / classes;

    if (thr == loosest) {
      if (tp_all) {
        rep.rmse_m = std::sqrt(se / static_cast<double>(tp_all));
      } else {
        log_warn("no true positives; distance RMSE is undefined");
      }
      rep.misclassification_rate =
          cross + tp_all ? static_cast<double>(cross) / static_cast<double>(cross + tp_all) : 0.0;
      rep.heading_count = n_heading;
      for (std::size_t b = 0; b < 3; ++b) {
        rep.heading_acc[b] = n_heading ? static_cast<double>(in_band[b]) / static_cast<double>(n_heading) : 0.0;
      }
    }
    rep.thresholds.push_back(tr);
  }
  return rep;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *v;
  return os.str();
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["frames"] = r.frames;
  j["thresholds"] = nlohmann::json::array();
  for (const auto& t : r.thresholds) {
    nlohmann::json tj{{"threshold_m", t.threshold_m}, {"map", opt(t.map)}};
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      const std::string name = class_name(static_cast<int>(k));
      tj["ap"][name] = opt(t.ap[k]);
      tj["tp"][name] = t.tp[k];
      tj["fp"][name] = t.fp[k];
      tj["fn"][name] = t.fn[k];
    }
    j["thresholds"].push_back(tj);
  }
  j["rmse_m"] = opt(r.rmse_m);
  j["misclassification_rate"] = r.misclassification_rate;
  j["heading_accuracy"] = {{"45", r.heading_acc[0]}, {"22.5", r.heading_acc[1]}, {"11.25", r.heading_acc[2]}};
  j["heading_count"] = r.heading_count;
  return j;
}

std::string csv_header() {
  return "model,threshold_m,map,ap_pedestrian,ap_cyclist,ap_car,rmse_m,misclassification,heading_45,heading_22.5,"
         "heading_11.25";
}

std::string csv_rows(const EvalReport& r, const std::string& model) {
  std::string out;
  for (const auto& t : r.thresholds) {
    out += model + "," + fmt(t.threshold_m) + "," + fmt(t.map);
    for (const auto& ap : t.ap) out += "," + fmt(ap);
    out += "," + fmt(r.rmse_m) + "," + fmt(r.misclassification_rate);
    for (double h : r.heading_acc) out += "," + fmt(h);
    out += "\n";
  }
  return out;
}

void write_report(const EvalReport& r, const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const std::string& model) {
  std::ofstream js(json_path, std::ios::trunc);
  if (!js) throw DataError("cannot write " + json_path.string());
  js << to_json(r).dump(2) << '\n';
  std::ofstream cs(csv_path, std::ios::trunc);
  if (!cs) throw DataError("cannot write " + csv_path.string());
  cs << csv_header() << '\n' << csv_rows(r, model);
}

}  // namespace raddet
