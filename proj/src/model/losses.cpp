#include "raddet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "raddet/ops.hpp"

namespace raddet {

namespace {

void require_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

// Checks that `mask` is [N,H,W] for a [N,C,H,W] prediction.
void require_mask(const char* op, const Tensor& pred, const Tensor& mask) {
  const auto& p = pred.shape();
  if (p.size() != 4 || mask.shape() != Shape{p[0], p[2], p[3]}) {
    throw std::invalid_argument(std::string(op) + ": mask shape " + to_string(mask.shape()) +
                                " does not match prediction " + to_string(p));
  }
}

double clamp_p(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }
// Derivative of the clamp: zero where the clamp is active.
double clamp_grad(double p) { return (p > kLogClamp && p < 1.0 - kLogClamp) ? 1.0 : 0.0; }

Tensor scalar_result(double value, const Tensor& pred, std::vector<double> dldp) {
  return make_result({1}, {value}, {pred}, [dldp = std::move(dldp)](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * dldp[i];
  });
}

}  // namespace

TargetBatch make_target_batch(const std::vector<TargetMaps>& maps) {
  if (maps.empty()) throw std::invalid_argument("make_target_batch: no targets");
  const std::size_t N = maps.size(), R = maps[0].rows, A = maps[0].cols;
  auto cat = [&](std::vector<double> TargetMaps::*member, Shape per) {
    std::vector<double> v;
    for (const auto& m : maps) {
      if (static_cast<std::size_t>(m.rows) != R || static_cast<std::size_t>(m.cols) != A) {
        throw std::invalid_argument("make_target_batch: targets have different sizes");
      }
      v.insert(v.end(), (m.*member).begin(), (m.*member).end());
    }
    per.insert(per.begin(), N);
    return Tensor(per, std::move(v));
  };
  return {cat(&TargetMaps::heatmap, {kNumClasses, R, A}), cat(&TargetMaps::offset, {2, R, A}),
          cat(&TargetMaps::offset_mask, {R, A}), cat(&TargetMaps::heading, {2, R / 4, A / 4}),
          cat(&TargetMaps::heading_mask, {R / 4, A / 4})};
}

Tensor heatmap_focal(const Tensor& pred, const Tensor& target, double alpha, double beta) {
  require_shape("heatmap_focal", pred, target);
  const auto p = pred.data();
  const auto y = target.data();
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw std::invalid_argument("heatmap_focal: prediction " + std::to_string(p[i]) + " at index " +
                                  std::to_string(i) + " is outside (0,1)");
    }
    n_pos += y[i] == 1.0;
  }
  const double norm = static_cast<double>(std::max<std::size_t>(1, n_pos));
  double loss = 0.0;
  std::vector<double> dldp(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = clamp_p(p[i]);
    double l, d;
    if (y[i] == 1.0) {
      const double a = std::pow(1.0 - q, alpha);
      l = -a * std::log(q);
      d = alpha * std::pow(1.0 - q, alpha - 1.0) * std::log(q) - a / q;
    } else {
      const double wneg = std::pow(1.0 - y[i], beta);
      const double pa = std::pow(q, alpha);
      l = -wneg * pa * std::log(1.0 - q);
      d = -wneg * (alpha * std::pow(q, alpha - 1.0) * std::log(1.0 - q) - pa / (1.0 - q));
    }
    loss += l;
    dldp[i] = d * clamp_grad(p[i]) / norm;
  }
  return scalar_result(loss / norm, pred, std::move(dldp));
}

Tensor offset_loss(const Tensor& pred, const Tensor& target_offset, const Tensor& mask, double gamma) {
  require_shape("offset_loss", pred, target_offset);
  require_mask("offset_loss", pred, mask);
  const auto p = pred.data();
  const auto o = target_offset.data();
  const auto m = mask.data();
  const std::size_t N = pred.dim(0), C = pred.dim(1), P = pred.dim(2) * pred.dim(3);
  std::size_t cells = 0;
  for (double v : m) cells += v != 0.0;
  std::vector<double> dldp(p.size(), 0.0);
  if (cells == 0) return scalar_result(0.0, pred, std::move(dldp));
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < P; ++k) {
        if (m[n * P + k] == 0.0) continue;
        const std::size_t i = (n * C + c) * P + k;
        const double t = (o[i] + 1.0) / 2.0;
        const double q = clamp_p(p[i]);
        const double bce = -(t * std::log(q) + (1.0 - t) * std::log(1.0 - q));
        const double dbce = -t / q + (1.0 - t) / (1.0 - q);
        const double e = std::abs(q - t);
        const double mod = std::pow(e, gamma);
        const double dmod = e > 0.0 ? gamma * std::pow(e, gamma - 1.0) * (q > t ? 1.0 : -1.0) : 0.0;
        loss += mod * bce;
        dldp[i] = (dmod * bce + mod * dbce) * clamp_grad(p[i]);
      }
  const double inv = 1.0 / static_cast<double>(cells);
  for (auto& d : dldp) d *= inv;
  return scalar_result(loss * inv, pred, std::move(dldp));
}

Tensor offset_l1_loss(const Tensor& pred, const Tensor& target_offset, const Tensor& mask) {
  require_shape("offset_l1_loss", pred, target_offset);
  require_mask("offset_l1_loss", pred, mask);
  const auto p = pred.data();
  const auto o = target_offset.data();
  const auto m = mask.data();
  const std::size_t N = pred.dim(0), C = pred.dim(1), P = pred.dim(2) * pred.dim(3);
  std::size_t cells = 0;
  for (double v : m) cells += v != 0.0;
  std::vector<double> dldp(p.size(), 0.0);
  if (cells == 0) return scalar_result(0.0, pred, std::move(dldp));
  const double inv = 1.0 / static_cast<double>(cells);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < P; ++k) {
        if (m[n * P + k] == 0.0) continue;
        const std::size_t i = (n * C + c) * P + k;
        const double r = (2.0 * p[i] - 1.0) - o[i];
        loss += std::abs(r);
        dldp[i] = (r > 0.0 ? 2.0 : r < 0.0 ? -2.0 : 0.0) * inv;
      }
  return scalar_result(loss * inv, pred, std::move(dldp));
}

Tensor heading_mse(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_shape("heading_mse", pred, target);
  require_mask("heading_mse", pred, mask);
  const auto p = pred.data();
  const auto t = target.data();
  const auto m = mask.data();
  const std::size_t N = pred.dim(0), C = pred.dim(1), P = pred.dim(2) * pred.dim(3);
  std::size_t cells = 0;
  for (double v : m) cells += v != 0.0;
  std::vector<double> dldp(p.size(), 0.0);
  if (cells == 0) return scalar_result(0.0, pred, std::move(dldp));
  const double inv = 1.0 / static_cast<double>(cells * C);
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < P; ++k) {
        if (m[n * P + k] == 0.0) continue;
        const std::size_t i = (n * C + c) * P + k;
        const double r = p[i] - t[i];
        loss += r * r;
        dldp[i] = 2.0 * r * inv;
      }
  return scalar_result(loss * inv, pred, std::move(dldp));
}

LossBreakdown total_loss(const NetworkOutput& out, const TargetBatch& tg, const LossWeights& w) {
  const Tensor lb = heatmap_focal(out.heatmap, tg.heatmap, w.alpha, w.beta);
  const Tensor lc = w.offset_l1 ? offset_l1_loss(out.offset, tg.offset, tg.offset_mask)
                                : offset_loss(out.offset, tg.offset, tg.offset_mask, w.gamma);
  const Tensor lh = heading_mse(out.heading, tg.heading, tg.heading_mask);
  LossBreakdown b;
  b.heatmap = lb.item();
  b.offset = lc.item();
  b.heading = lh.item();
  b.total = add(add(scale(lb, w.w1), scale(lc, w.w2)), scale(lh, w.w3));
  return b;
}

}  // namespace raddet
