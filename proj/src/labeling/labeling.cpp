#include "raddet/labeling.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "raddet/log.hpp"

namespace raddet {

namespace {

// Negation that never produces -0.0, so mirrored maps compare bit-equal.
double neg(double v) { return v == 0.0 ? 0.0 : -v; }

std::string box_str(const BinBox& b) {
  return "[" + std::to_string(b[0]) + "," + std::to_string(b[1]) + "," + std::to_string(b[2]) + "," +
         std::to_string(b[3]) + "]";
}

// Intensity-weighted fraction of the variance left after cutting a Gaussian
// at relative level tau: 1 - (c/2) e^{-c/2} / (1 - e^{-c/2}), c = -2 ln tau.
double truncated_variance_factor(double tau) {
  if (tau <= 0.0) return 1.0;
  const double c = -2.0 * std::log(tau);
  const double e = std::exp(-c / 2.0);
  return 1.0 - (c / 2.0) * e / (1.0 - e);
}

// Column pairs (left, right) mirrored about the box centre; a centre column
// pairs with itself. Summing each pair before accumulating keeps the sums
// sign-exact under reflection of the angle axis.
template <typename F>
void for_each_mirror_pair(int c0, int c1, F&& f) {
  for (int k = 0; c0 + k <= c1 - k; ++k) f(c0 + k, c1 - k);
}

struct Crop {
  int r0, c0, r1, c1;
  double xc, yc;  // box centre, exact half-integers
  std::vector<double> w;  // normalised and masked, (r1-r0+1) x (c1-c0+1)
  int width() const { return c1 - c0 + 1; }
  double at(int r, int c) const { return w[static_cast<std::size_t>(r - r0) * width() + (c - c0)]; }
};

bool fit_log_quadratic(const Crop& cr, double& mx, double& my, double& sxx, double& syy, double& sxy) {
  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  Mat6 M = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  int used = 0;
  auto basis = [](double x, double y) {
    Vec6 p;
    p << 1.0, x, y, x * x, x * y, y * y;
    return p;
  };
  for (int r = cr.r0; r <= cr.r1; ++r) {
    const double x = r - cr.xc;
    Mat6 row_m = Mat6::Zero();
    Vec6 row_b = Vec6::Zero();
    for_each_mirror_pair(cr.c0, cr.c1, [&](int cl, int cr_) {
      const double wl = cr.at(r, cl);
      const double wr = (cl == cr_) ? 0.0 : cr.at(r, cr_);
      const double yl = cl - cr.yc;
      const double yr = cr_ - cr.yc;
      Mat6 ml = Mat6::Zero(), mr = Mat6::Zero();
      Vec6 bl = Vec6::Zero(), br = Vec6::Zero();
      if (wl > 0.0) {
        const Vec6 p = basis(x, yl);
        const double om = wl * wl;
        for (int i = 0; i < 6; ++i) {
          for (int j = 0; j < 6; ++j) ml(i, j) = (p(i) * p(j)) * om;
          bl(i) = p(i) * (om * std::log(wl));
        }
        ++used;
      }
      if (wr > 0.0) {
        const Vec6 p = basis(x, yr);
        const double om = wr * wr;
        for (int i = 0; i < 6; ++i) {
          for (int j = 0; j < 6; ++j) mr(i, j) = (p(i) * p(j)) * om;
          br(i) = p(i) * (om * std::log(wr));
        }
        ++used;
      }
      for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) row_m(i, j) += ml(i, j) + mr(i, j);
        row_b(i) += bl(i) + br(i);
      }
    });
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) M(i, j) += row_m(i, j);
      b(i) += row_b(i);
    }
  }
  if (used < 6) return false;
  Eigen::FullPivLU<Mat6> lu(M);
  if (lu.rank() < 6) return false;
  const Vec6 c = lu.solve(b);
  if (!c.allFinite()) return false;

  // ln w = c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2; precision P = -Hessian.
  const double p11 = -2.0 * c(3), p22 = -2.0 * c(5), p12 = -c(4);
  const double det = p11 * p22 - p12 * p12;
  if (!(p11 > 0.0 && p22 > 0.0 && det > 0.0)) return false;
  sxx = p22 / det;
  syy = p11 / det;
  sxy = neg(p12) / det;
  mx = sxx * c(1) + sxy * c(2);
  my = sxy * c(1) + syy * c(2);
  const double hx = (cr.r1 - cr.r0) / 2.0 + 1.0, hy = (cr.c1 - cr.c0) / 2.0 + 1.0;
  return std::isfinite(mx) && std::isfinite(my) && std::abs(mx) <= hx && std::abs(my) <= hy;
}

bool fit_moments(const Crop& cr, double tau, double& mx, double& my, double& sxx, double& syy, double& sxy) {
  double m0 = 0, m1x = 0, m1y = 0, m2xx = 0, m2yy = 0, m2xy = 0;
  for (int r = cr.r0; r <= cr.r1; ++r) {
    const double x = r - cr.xc;
    double s0 = 0, sx = 0, sy = 0, sxx_ = 0, syy_ = 0, sxy_ = 0;
    for_each_mirror_pair(cr.c0, cr.c1, [&](int cl, int cr_) {
      const double wl = cr.at(r, cl);
      const double wr = (cl == cr_) ? 0.0 : cr.at(r, cr_);
      const double yl = cl - cr.yc, yr = cr_ - cr.yc;
      s0 += wl + wr;
      sx += wl * x + wr * x;
      sy += wl * yl + wr * yr;
      sxx_ += wl * (x * x) + wr * (x * x);
      syy_ += wl * (yl * yl) + wr * (yr * yr);
      sxy_ += wl * (x * yl) + wr * (x * yr);
    });
    m0 += s0;
    m1x += sx;
    m1y += sy;
    m2xx += sxx_;
    m2yy += syy_;
    m2xy += sxy_;
  }
  if (!(m0 > 0.0)) return false;
  mx = m1x / m0;
  my = m1y / m0;
  const double k = truncated_variance_factor(tau);
  sxx = std::max(0.0, m2xx / m0 - mx * mx) / k;
  syy = std::max(0.0, m2yy / m0 - my * my) / k;
  sxy = (m2xy / m0 - mx * my) / k;
  return true;
}

// Symmetric rounding keeps +x and -x on mirrored grid points.
double quantize_symmetric(double v) {
  const double q = std::round(std::abs(v) * 65536.0) / 65536.0;
  return v < 0.0 ? -q : q;
}

}  // namespace

BivariateParams bivariate_from_spectrum(std::span<const float> ra, int rows, int cols, const BinBox& box,
                                        double mask_threshold, FitMethod* method) {
  if (ra.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("bivariate_from_spectrum: map size does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  const auto [r0, c0, r1, c1] = box;
  if (r0 < 0 || c0 < 0 || r1 >= rows || c1 >= cols || r0 > r1 || c0 > c1) {
    throw std::invalid_argument("bivariate_from_spectrum: box " + box_str(box) + " is empty or outside the map");
  }
  Crop cr{r0, c0, r1, c1, (r0 + r1) / 2.0, (c0 + c1) / 2.0, {}};
  double vmax = 0.0;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) vmax = std::max(vmax, static_cast<double>(ra[static_cast<std::size_t>(r) * cols + c]));
  if (!(vmax > 0.0)) throw std::invalid_argument("bivariate_from_spectrum: box " + box_str(box) + " has no energy");

  auto mask_at = [&](double tau) {
    cr.w.clear();
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const double v = ra[static_cast<std::size_t>(r) * cols + c] / vmax;
        cr.w.push_back(v >= tau ? v : 0.0);
      }
  };

  BivariateParams p;
  double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
  FitMethod used = FitMethod::log_quadratic;
  // A blob under about one bin wide leaves too few cells above the threshold
  // for the quadratic, so lower it twice before giving up on the exact fit.
  bool fitted = false;
  for (double tau : {mask_threshold, mask_threshold / 2.0, mask_threshold / 4.0}) {
    mask_at(tau);
    if ((fitted = fit_log_quadratic(cr, mx, my, sxx, syy, sxy))) break;
  }
  if (!fitted) {
    mask_at(mask_threshold);
    used = FitMethod::moments;
    if (!fit_moments(cr, mask_threshold, mx, my, sxx, syy, sxy)) {
      used = FitMethod::degenerate;
      log_warn("bivariate_from_spectrum: every bin of box " + box_str(box) +
               " fell below the mask threshold; using the box centre");
      mx = my = sxx = syy = sxy = 0.0;
    }
  }
  if (method) *method = used;

  p.mu_r = cr.xc + quantize_symmetric(mx);
  p.mu_a = cr.yc + quantize_symmetric(my);
  const double sr = std::sqrt(sxx), sa = std::sqrt(syy);
  p.rho = (sr > 0.0 && sa > 0.0) ? std::clamp(sxy / (sr * sa), -kRhoMax, kRhoMax) : 0.0;
  if (p.rho == 0.0) p.rho = 0.0;
  p.sigma_r = std::max(kSigmaMin, sr);
  p.sigma_a = std::max(kSigmaMin, sa);
  return p;
}

namespace {

template <typename F>
std::vector<double> eval_grid(const BivariateParams& p, int rows, int cols, F&& f) {
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  const double one_m_rho2 = 1.0 - p.rho * p.rho;
  for (int i = 0; i < rows; ++i) {
    const double dx = (i - p.mu_r) / p.sigma_r;
    for (int j = 0; j < cols; ++j) {
      const double dy = (j - p.mu_a) / p.sigma_a;
      const double q = (dx * dx - 2.0 * p.rho * dx * dy + dy * dy) / one_m_rho2;
      out[static_cast<std::size_t>(i) * cols + j] = f(q);
    }
  }
  return out;
}

void check_params(const BivariateParams& p) {
  if (!(p.sigma_r > 0.0 && p.sigma_a > 0.0 && std::abs(p.rho) < 1.0)) {
    throw std::invalid_argument("bivariate params need positive sigmas and |rho| < 1");
  }
}

}  // namespace

std::vector<double> render_bivariate(const BivariateParams& p, int rows, int cols) {
  check_params(p);
  auto out = eval_grid(p, rows, cols, [](double q) { return q > 16.0 ? 0.0 : std::exp(-0.5 * q); });
  const double peak = *std::max_element(out.begin(), out.end());
  if (peak > 0.0) {
    for (auto& v : out) v /= peak;
  }
  return out;
}

std::vector<double> bivariate_density(const BivariateParams& p, int rows, int cols) {
  check_params(p);
  const double norm = 1.0 / (2.0 * std::numbers::pi * p.sigma_r * p.sigma_a * std::sqrt(1.0 - p.rho * p.rho));
  return eval_grid(p, rows, cols, [norm](double q) { return norm * std::exp(-0.5 * q); });
}

std::vector<double> render_plain_gaussian(double mu_r, double mu_a, double sigma_bins, int rows, int cols) {
  return render_bivariate({mu_r, mu_a, sigma_bins, sigma_bins, 0.0}, rows, cols);
}

int nearest_cell(double mu, int n) {
  const double fl = std::floor(mu);
  int cell;
  if (mu - fl == 0.5) {
    const double centre = (n - 1) / 2.0;
    cell = static_cast<int>(fl < centre ? fl + 1.0 : fl);
  } else {
    cell = static_cast<int>(std::round(mu));
  }
  return std::clamp(cell, 0, n - 1);
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "bivariate") return LabelMode::bivariate;
  if (s == "gaussian") return LabelMode::gaussian;
  throw std::invalid_argument("label mode must be 'bivariate' or 'gaussian', got '" + s + "'");
}

const char* to_string(LabelMode mode) { return mode == LabelMode::bivariate ? "bivariate" : "gaussian"; }

TargetMaps empty_targets(int rows, int cols) {
  if (rows % 4 || cols % 4) {
    throw std::invalid_argument("target maps need sizes divisible by 4, got " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  const std::size_t q = n / 16;
  TargetMaps t;
  t.rows = rows;
  t.cols = cols;
  t.heatmap.assign(kNumClasses * n, 0.0);
  t.offset.assign(2 * n, 0.0);
  t.offset_mask.assign(n, 0.0);
  t.heading.assign(2 * q, 0.0);
  t.heading_mask.assign(q, 0.0);
  return t;
}

void offset_targets(const std::vector<Annotation>& annotations, int rows, int cols, int patch,
                    std::vector<double>& offset, std::vector<double>& mask) {
  if (patch < 1 || patch % 2 == 0) throw std::invalid_argument("offset patch must be odd, got " + std::to_string(patch));
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  offset.assign(2 * n, 0.0);
  mask.assign(n, 0.0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  const int half = patch / 2;
  const double norm = half > 0 ? half : 1.0;
  for (const auto& a : annotations) {
    const int nr = nearest_cell(a.center_r, rows), na = nearest_cell(a.center_a, cols);
    for (int r = std::max(0, nr - half); r <= std::min(rows - 1, nr + half); ++r) {
      for (int c = std::max(0, na - half); c <= std::min(cols - 1, na + half); ++c) {
        const double dr = a.center_r - r, da = a.center_a - c;
        const double d2 = dr * dr + da * da;
        const std::size_t idx = static_cast<std::size_t>(r) * cols + c;
        if (d2 >= best[idx]) continue;
        best[idx] = d2;
        offset[idx] = dr / norm;
        offset[n + idx] = da / norm;
        mask[idx] = 1.0;
      }
    }
  }
}

void heading_targets(const std::vector<Annotation>& annotations, int rows, int cols, std::vector<double>& heading,
                     std::vector<double>& mask) {
  if (rows % 4 || cols % 4) throw std::invalid_argument("heading_targets: map sizes must be divisible by 4");
  const int qr = rows / 4, qc = cols / 4;
  const std::size_t n = static_cast<std::size_t>(qr) * qc;
  heading.assign(2 * n, 0.0);
  mask.assign(n, 0.0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (const auto& a : annotations) {
    const int cr = nearest_cell(a.center_r, rows) / 4, cc = nearest_cell(a.center_a, cols) / 4;
    const double s = std::sin(a.heading_rad), co = std::cos(a.heading_rad);
    for (int r = std::max(0, cr - 1); r <= std::min(qr - 1, cr + 1); ++r) {
      for (int c = std::max(0, cc - 1); c <= std::min(qc - 1, cc + 1); ++c) {
        // Distance from the quarter cell's centre in full-resolution bins.
        const double dr = a.center_r - (4.0 * r + 1.5), da = a.center_a - (4.0 * c + 1.5);
        const double d2 = dr * dr + da * da;
        const std::size_t idx = static_cast<std::size_t>(r) * qc + c;
        if (d2 >= best[idx]) continue;
        best[idx] = d2;
        heading[idx] = s;
        heading[n + idx] = co;
        mask[idx] = 1.0;
      }
    }
  }
}

TargetMaps make_targets(const RadarFrame& frame, const std::vector<Annotation>& annotations,
                        const LabelConfig& config) {
  const int R = frame.geometry.r_bins, A = frame.geometry.a_bins;
  TargetMaps t = empty_targets(R, A);
  const std::size_t n = static_cast<std::size_t>(R) * A;
  for (const auto& a : annotations) {
    if (a.class_id < 0 || a.class_id >= kNumClasses) {
      throw std::invalid_argument("make_targets: annotation class " + std::to_string(a.class_id) + " is invalid");
    }
    std::vector<double> blob;
    if (config.mode == LabelMode::bivariate) {
      // The spectrum supplies the spread; the centre stays on the annotation so
      // a neighbour's energy inside the box cannot drag the peak away.
      BivariateParams p = bivariate_from_spectrum(frame.ra, R, A, a.box_ra, config.mask_threshold);
      p.mu_r = a.center_r;
      p.mu_a = a.center_a;
      blob = render_bivariate(p, R, A);
    } else {
      blob = render_plain_gaussian(a.center_r, a.center_a, R / 32.0, R, A);
    }
    double* ch = t.heatmap.data() + a.class_id * n;
    for (std::size_t i = 0; i < n; ++i) ch[i] = std::max(ch[i], blob[i]);
  }
  offset_targets(annotations, R, A, config.offset_patch, t.offset, t.offset_mask);
  heading_targets(annotations, R, A, t.heading, t.heading_mask);
  return t;
}

std::vector<double> heading_from_trajectory(std::span<const TrajectorySample> s) {
  const std::size_t n = s.size();
  if (n < 2) throw std::invalid_argument("heading_from_trajectory: need at least 2 samples");
  for (std::size_t i = 1; i < n; ++i) {
    if (s[i].t == s[i - 1].t) {
      throw std::invalid_argument("heading_from_trajectory: duplicate timestamp " + std::to_string(s[i].t));
    }
    if (!(s[i].t > s[i - 1].t)) throw std::invalid_argument("heading_from_trajectory: timestamps must increase");
  }
  if (n == 2) {
    const double h = std::atan2(s[1].x - s[0].x, s[1].y - s[0].y);
    return {h, h};
  }

  // Natural spline: second derivatives M with M_0 = M_{n-1} = 0, solved by
  // the Thomas algorithm on the interior rows.
  auto derivatives = [&](auto value) {
    std::vector<double> h(n - 1), M(n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = s[i + 1].t - s[i].t;
    const std::size_t m = n - 2;
    std::vector<double> diag(m), upper(m), rhs(m);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t i = k + 1;
      diag[k] = 2.0 * (h[i - 1] + h[i]);
      upper[k] = h[i];
      rhs[k] = 6.0 * ((value(i + 1) - value(i)) / h[i] - (value(i) - value(i - 1)) / h[i - 1]);
    }
    for (std::size_t k = 1; k < m; ++k) {
      const double f = h[k] / diag[k - 1];  // sub-diagonal entry of row k is h[k]
      diag[k] -= f * upper[k - 1];
      rhs[k] -= f * rhs[k - 1];
    }
    for (std::size_t k = m; k-- > 0;) {
      M[k + 1] = (rhs[k] - (k + 1 < m ? upper[k] * M[k + 2] : 0.0)) / diag[k];
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      d[i] = (value(i + 1) - value(i)) / h[i] - h[i] * (2.0 * M[i] + M[i + 1]) / 6.0;
    }
    d[n - 1] = (value(n - 1) - value(n - 2)) / h[n - 2] + h[n - 2] * (M[n - 2] + 2.0 * M[n - 1]) / 6.0;
    return d;
  };
  const auto dx = derivatives([&](std::size_t i) { return s[i].x; });
  const auto dy = derivatives([&](std::size_t i) { return s[i].y; });
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::atan2(dx[i], dy[i]);
  return out;
}

namespace {

template <typename T>
void reverse_columns(std::vector<T>& data, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) std::reverse(data.begin() + r * cols, data.begin() + (r + 1) * cols);
}

}  // namespace

void flip_frame(RadarFrame& frame) {
  const auto& g = frame.geometry;
  reverse_columns(frame.ra, g.r_bins, g.a_bins);
  // AD has angle on its rows.
  const std::size_t D = g.d_bins;
  for (int r = 0; r < g.a_bins / 2; ++r) {
    std::swap_ranges(frame.ad.begin() + r * D, frame.ad.begin() + (r + 1) * D,
                     frame.ad.begin() + (g.a_bins - 1 - r) * D);
  }
}

void flip_targets(TargetMaps& t) {
  const std::size_t R = t.rows, A = t.cols;
  reverse_columns(t.heatmap, kNumClasses * R, A);
  reverse_columns(t.offset, 2 * R, A);
  for (std::size_t i = R * A; i < 2 * R * A; ++i) t.offset[i] = neg(t.offset[i]);
  reverse_columns(t.offset_mask, R, A);
  const std::size_t q = (R / 4) * (A / 4);
  reverse_columns(t.heading, 2 * (R / 4), A / 4);
  for (std::size_t i = 0; i < q; ++i) t.heading[i] = neg(t.heading[i]);
  reverse_columns(t.heading_mask, R / 4, A / 4);
}

Annotation flip_annotation(const Annotation& a, int cols) {
  Annotation f = a;
  f.center_a = (cols - 1) - a.center_a;
  f.box_ra[1] = cols - 1 - a.box_ra[3];
  f.box_ra[3] = cols - 1 - a.box_ra[1];
  f.heading_rad = neg(a.heading_rad);
  return f;
}

namespace {

void add_noise(RadarFrame& frame, double scale, Rng& rng) {
  for (auto* map : {&frame.ra, &frame.rd, &frame.ad}) {
    double mean = 0.0, sq = 0.0;
    for (float v : *map) mean += v;
    mean /= static_cast<double>(map->size());
    for (float v : *map) sq += (v - mean) * (v - mean);
    const double sd = scale * std::sqrt(sq / static_cast<double>(map->size()));
    for (auto& v : *map) v = static_cast<float>(std::max(0.0, v + sd * rng.normal()));
  }
}

}  // namespace

void augment(std::vector<RadarFrame>& stack, TargetMaps& targets, std::vector<Annotation>& annotations, Rng& rng,
             const AugmentConfig& config) {
  if (stack.empty()) throw std::invalid_argument("augment: empty frame stack");
  if (rng.bernoulli(config.p_noise)) {
    for (auto& f : stack) add_noise(f, config.noise_scale, rng);
  }
  if (rng.bernoulli(config.p_flip)) {
    for (auto& f : stack) flip_frame(f);
    flip_targets(targets);
    for (auto& a : annotations) a = flip_annotation(a, stack.front().geometry.a_bins);
  }
}

void augment(RadarFrame& frame, TargetMaps& targets, std::vector<Annotation>& annotations, Rng& rng,
             const AugmentConfig& config) {
  std::vector<RadarFrame> stack{std::move(frame)};
  augment(stack, targets, annotations, rng, config);
  frame = std::move(stack.front());
}

}  // namespace raddet
