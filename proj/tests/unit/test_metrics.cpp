#include <cmath>
#include <numbers>

#include "doctest.h"
#include "raddet/metrics.hpp"
#include "raddet/rng.hpp"

using namespace raddet;

namespace {

Detection det(int cls, double x, double y, double conf, std::optional<double> heading = std::nullopt) {
  Detection d;
  d.class_id = cls;
  d.x = x;
  d.y = y;
  d.confidence = conf;
  d.heading_rad = heading;
  return d;
}

GroundTruth gt(int cls, double x, double y, std::optional<double> heading = std::nullopt) {
  return {cls, x, y, heading};
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

TEST_CASE("match") {
  SUBCASE("within threshold is a true positive") {
    const auto as = match({det(0, 0.5, 10, 0.9)}, {gt(0, 0, 10)}, 1.0);
    CHECK(as.det_to_gt[0] == 0);
    CHECK(as.gt_to_det[0] == 0);
  }
  SUBCASE("outside threshold is FP and FN") {
    const auto as = match({det(0, 1.5, 10, 0.9)}, {gt(0, 0, 10)}, 1.0);
    CHECK(as.det_to_gt[0] == -1);
    CHECK(as.gt_to_det[0] == -1);
  }
  SUBCASE("the more confident of two detections takes the object") {
    // The 0.6 detection is closer, but greedy order gives the object to 0.9.
    const auto as = match({det(0, 0.1, 10, 0.6), det(0, 0.4, 10, 0.9)}, {gt(0, 0, 10)}, 1.0);
    CHECK(as.det_to_gt[1] == 0);
    CHECK(as.det_to_gt[0] == -1);
  }
  SUBCASE("other classes never match but are recorded") {
    const auto as = match({det(1, 0.2, 10, 0.9)}, {gt(0, 0, 10)}, 1.0);
    CHECK(as.det_to_gt[0] == -1);
    CHECK(as.cross_class[0] == 0);
  }
  SUBCASE("order-invariant with distinct confidences") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      std::vector<Detection> d;
      std::vector<GroundTruth> g;
      for (int i = 0; i < 6; ++i) d.push_back(det(rng.below(2), rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform()));
      for (int i = 0; i < 4; ++i) g.push_back(gt(rng.below(2), rng.uniform(0, 4), rng.uniform(0, 4)));
      const auto a = match(d, g, 1.0);
      std::vector<Detection> rev(d.rbegin(), d.rend());
      const auto b = match(rev, g, 1.0);
      for (std::size_t i = 0; i < d.size(); ++i) CHECK(a.det_to_gt[i] == b.det_to_gt[d.size() - 1 - i]);
    }
  }
}

TEST_CASE("average precision fixtures") {
  CHECK(*average_precision({true, false, true}, 2) == 5.0 / 6.0);
  CHECK(*average_precision({true, true}, 2) == 1.0);
  CHECK(*average_precision({}, 2) == 0.0);
  CHECK_FALSE(average_precision({true}, 0).has_value());
  // recall 1/3 then 2/3 with precision 1, 2/3 -> 1/3 + 2/9
  CHECK(*average_precision({true, false, true}, 3) == doctest::Approx(1.0 / 3 + 2.0 / 9).epsilon(1e-15));
  SUBCASE("eleven-point variant") {
    // recall points 0..0.5 -> 1, 0.6..1.0 -> 2/3
    CHECK(*average_precision({true, false, true}, 2, ApInterpolation::eleven_point) ==
          doctest::Approx((6.0 + 5.0 * 2.0 / 3.0) / 11.0).epsilon(1e-15));
    CHECK(*average_precision({true, true}, 2, ApInterpolation::eleven_point) == doctest::Approx(1.0));
  }
}

TEST_CASE("angle_error wraps") {
  CHECK(angle_error(0.0, 0.0) == 0.0);
  CHECK(angle_error(deg(-175), deg(175)) == doctest::Approx(deg(10)).epsilon(1e-12));
  CHECK(angle_error(deg(30), 0.0) == doctest::Approx(deg(30)));
  CHECK(angle_error(deg(270), 0.0) == doctest::Approx(deg(90)));
}

TEST_CASE("evaluate_frames") {
  SUBCASE("distance RMSE") {
    FrameResult f{{det(0, 0.3, 10, 0.9), det(1, 0, 20.4, 0.9)}, {gt(0, 0, 10), gt(1, 0, 20)}};
    const auto r = evaluate_frames({f});
    CHECK(*r.rmse_m == doctest::Approx(std::sqrt(0.125)));
    FrameResult exact{{det(0, 0, 10, 0.9)}, {gt(0, 0, 10)}};
    CHECK(*evaluate_frames({exact}).rmse_m == 0.0);
    CHECK_FALSE(evaluate_frames({FrameResult{{}, {gt(0, 0, 10)}}}).rmse_m.has_value());
  }
  SUBCASE("heading bands") {
    FrameResult f{{det(0, 0, 10, 0.9, deg(-175)), det(1, 0, 20, 0.9, deg(30)), det(2, 0, 30, 0.9, 0.0)},
                  {gt(0, 0, 10, deg(175)), gt(1, 0, 20, 0.0), gt(2, 0, 30, 0.0)}};
    const auto r = evaluate_frames({f});
    CHECK(r.heading_count == 3);
    CHECK(r.heading_acc[0] == 1.0);
    CHECK(r.heading_acc[1] == doctest::Approx(2.0 / 3));
    CHECK(r.heading_acc[2] == doctest::Approx(2.0 / 3));
  }
  SUBCASE("misclassification rate") {
    FrameResult f;
    for (int i = 0; i < 9; ++i) {
      f.detections.push_back(det(0, 5.0 * i, 10, 0.9));
      f.ground_truth.push_back(gt(0, 5.0 * i, 10));
    }
    f.detections.push_back(det(2, 100, 10.2, 0.7));
    f.ground_truth.push_back(gt(1, 100, 10));
    const auto r = evaluate_frames({f});
    CHECK(r.misclassification_rate == doctest::Approx(0.1));
    CHECK(r.at(2.0).tp[0] == 9);
    CHECK(r.at(2.0).fp[2] == 1);
    CHECK(r.at(2.0).fn[1] == 1);
  }
  SUBCASE("perfect and empty detectors") {
    FrameResult f{{det(0, 0, 10, 0.9), det(1, 3, 10, 0.8)}, {gt(0, 0, 10), gt(1, 3, 10)}};
    auto r = evaluate_frames({f});
    CHECK(*r.at(2.0).map == 1.0);
    CHECK(*r.at(1.0).map == 1.0);
    CHECK_FALSE(r.at(1.0).ap[2].has_value());
    f.detections.clear();
    r = evaluate_frames({f});
    CHECK(*r.at(2.0).map == 0.0);
  }
  SUBCASE("tighter threshold never scores higher, and rates stay in range") {
    Rng rng(17);
    for (int t = 0; t < 40; ++t) {
      std::vector<FrameResult> frames(3);
      for (auto& f : frames) {
        for (int i = 0; i < 5; ++i) f.ground_truth.push_back(gt(rng.below(3), rng.uniform(-10, 10), rng.uniform(0, 20)));
        for (const auto& g : f.ground_truth) {
          if (rng.bernoulli(0.8)) {
            f.detections.push_back(det(rng.bernoulli(0.9) ? g.class_id : (g.class_id + 1) % 3,
                                       g.x + rng.uniform(-1.5, 1.5), g.y + rng.uniform(-1.5, 1.5), rng.uniform()));
          }
        }
        f.detections.push_back(det(rng.below(3), rng.uniform(-10, 10), rng.uniform(0, 20), rng.uniform()));
      }
      const auto r = evaluate_frames(frames);
      for (std::size_t k = 0; k < 3; ++k) {
        if (!r.at(2.0).ap[k]) continue;
        CHECK(*r.at(1.0).ap[k] <= *r.at(2.0).ap[k] + 1e-15);
        CHECK(*r.at(2.0).ap[k] >= 0.0);
        CHECK(*r.at(2.0).ap[k] <= 1.0);
      }
      CHECK(r.misclassification_rate >= 0.0);
      CHECK(r.misclassification_rate <= 1.0);

      // Audit: a detection counts as misclassified when it is unmatched and the
      // closest object within 2 m belongs to another class.
      std::size_t cross = 0, tp = 0;
      for (const auto& f : frames) {
        const auto as = match(f.detections, f.ground_truth, 2.0);
        for (std::size_t i = 0; i < f.detections.size(); ++i) {
          if (as.det_to_gt[i] >= 0) {
            ++tp;
            continue;
          }
          double best = 2.0;
          int cls = -1;
          for (const auto& g : f.ground_truth) {
            const double dd = std::hypot(f.detections[i].x - g.x, f.detections[i].y - g.y);
            if (dd <= best && (cls < 0 || dd < best)) {
              best = dd;
              cls = g.class_id;
            }
          }
          cross += cls >= 0 && cls != f.detections[i].class_id;
        }
      }
      CHECK(r.misclassification_rate == doctest::Approx(cross + tp ? double(cross) / double(cross + tp) : 0.0));
    }
  }
}

TEST_CASE("report serialisation") {
  FrameResult f{{det(0, 0, 10, 0.9, 0.0)}, {gt(0, 0, 10, 0.0)}};
  const auto r = evaluate_frames({f});
  const auto j = to_json(r);
  CHECK(j["thresholds"][0]["ap"]["pedestrian"] == 1.0);
  CHECK(j["thresholds"][0]["ap"]["car"].is_null());
  CHECK(j["heading_accuracy"]["45"] == 1.0);
  const auto rows = csv_rows(r, "m");
  CHECK(rows.rfind("m,2.000000,1.000000,1.000000,,", 0) == 0);
  CHECK(std::count(rows.begin(), rows.end(), '\n') == 2);
}
