#pragma once

// Brute-force references shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <bit>
#include <cmath>
#include <span>
#include <tuple>
#include <vector>

#include "raddet/inference.hpp"
#include "raddet/model.hpp"
#include "raddet/rng.hpp"

namespace raddet::oracle {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline ModelInput random_input(const ModelConfig& c, std::size_t n, Rng& rng) {
  const auto T = static_cast<std::size_t>(c.t_frames);
  const auto R = static_cast<std::size_t>(c.geometry.r_bins), A = static_cast<std::size_t>(c.geometry.a_bins),
             D = static_cast<std::size_t>(c.geometry.d_bins);
  return {random_tensor({n, T, R, A}, rng, 0, 1), random_tensor({n, T, R, D}, rng, 0, 1),
          random_tensor({n, T, A, D}, rng, 0, 1)};
}

inline bool same_bytes(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

// Plain loops: F1 = RD x AD^T, softmax over the angle axis, gate RA, residual,
// then layer norm over channels at each cell.
inline std::vector<double> cross_attention(const Tensor& ra, const Tensor& rd, const Tensor& ad,
                                           const std::vector<double>& gamma, const std::vector<double>& beta) {
  const std::size_t C = ra.dim(0), h = ra.dim(1), w = ra.dim(2), d = rd.dim(2);
  std::vector<double> z(C * h * w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i) {
      std::vector<double> row(w);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < w; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += rd.data()[(c * h + i) * d + k] * ad.data()[(c * w + j) * d + k];
        row[j] = s;
        mx = std::max(mx, s);
      }
      double den = 0.0;
      for (auto& v : row) den += (v = std::exp(v - mx));
      for (std::size_t j = 0; j < w; ++j) {
        const double x = ra.data()[(c * h + i) * w + j];
        z[(c * h + i) * w + j] = row[j] / den * x + x;
      }
    }
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t c = 0; c < C; ++c) m += z[(c * h + i) * w + j];
      m /= static_cast<double>(C);
      for (std::size_t c = 0; c < C; ++c) v += (z[(c * h + i) * w + j] - m) * (z[(c * h + i) * w + j] - m);
      v /= static_cast<double>(C);
      for (std::size_t c = 0; c < C; ++c) {
        out[(c * h + i) * w + j] = gamma[c] * (z[(c * h + i) * w + j] - m) / std::sqrt(v + 1e-5) + beta[c];
      }
    }
  return out;
}

// Peak test written as an ordering: a cell wins its window if no other cell in
// it has a larger (value, -r, -a) key.
inline std::vector<Peak> peaks(const std::vector<double>& m, int classes, int rows, int cols, int kernel, double thr) {
  std::vector<Peak> out;
  const int h = kernel / 2;
  auto key = [&](int k, int r, int a) { return std::tuple(m[(k * rows + r) * cols + a], -r, -a); };
  for (int k = 0; k < classes; ++k)
    for (int r = 0; r < rows; ++r)
      for (int a = 0; a < cols; ++a) {
        auto best = key(k, r, a);
        for (int i = r - h; i <= r + h; ++i)
          for (int j = a - h; j <= a + h; ++j) {
            if (i < 0 || j < 0 || i >= rows || j >= cols) continue;
            best = std::max(best, key(k, i, j));
          }
        const double v = m[(k * rows + r) * cols + a];
        if (best == key(k, r, a) && v > thr) out.push_back({k, r, a, v});
      }
  return out;
}

// Suppression matrix over confidence ranks, resolved rank by rank. Returns the
// kept input indices in ascending order.
inline std::vector<std::size_t> dnms(const std::vector<Detection>& d, double radius) {
  const std::size_t n = d.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) rank[i] = i;
  std::sort(rank.begin(), rank.end(), [&](auto a, auto b) { return d[a].confidence > d[b].confidence; });
  std::vector<std::vector<bool>> close(n, std::vector<bool>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = d[i].x - d[j].x, dy = d[i].y - d[j].y;
      close[i][j] = std::sqrt(dx * dx + dy * dy) < radius;
    }
  std::vector<bool> keep(n, false);
  for (std::size_t p = 0; p < n; ++p) {
    bool k = true;
    for (std::size_t q = 0; q < p; ++q) k = k && !(keep[rank[q]] && close[rank[p]][rank[q]]);
    keep[rank[p]] = k;
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) kept.push_back(i);
  return kept;
}

// Detections in a 6 m square; `r` carries the input index as a tag.
inline std::vector<Detection> random_detections(Rng& rng, std::size_t n) {
  std::vector<Detection> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i].class_id = static_cast<int>(rng.below(3));
    d[i].x = rng.uniform(-3, 3);
    d[i].y = rng.uniform(0, 6);
    d[i].confidence = rng.uniform(0.1, 1.0);
    d[i].r = static_cast<double>(i);
  }
  return d;
}

}  // namespace raddet::oracle
