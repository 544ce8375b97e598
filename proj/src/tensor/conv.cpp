#include <Eigen/Core>
#include <span>
#include <stdexcept>
#include <string>

#include "raddet/ops.hpp"

namespace raddet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Eigen picks its vectorised paths from operand alignment, and the summation
// order differs between them. Keeping every operand in aligned scratch makes
// results independent of where the heap happened to place a tensor.
using Scratch = std::vector<double, Eigen::aligned_allocator<double>>;
using AConstMap = Eigen::Map<const RowMat, Eigen::Aligned>;
using AMutMap = Eigen::Map<RowMat, Eigen::Aligned>;

Scratch aligned_copy(std::span<const double> v) { return Scratch(v.begin(), v.end()); }

void add_into(std::vector<double>& dst, const Scratch& src) {
  for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
}

struct ConvGeom {
  std::size_t channels, height, width;  // image side
  std::size_t kh, kw;
  Pair2 stride, pad;
  std::size_t out_h, out_w;  // column side (conv output positions)
};

// Unfolds one [C,H,W] image into rows (c, ki, kj) x columns (oh, ow) of a
// column matrix with leading dimension `ld`, starting at column `offset`.
void im2col(const double* x, const ConvGeom& g, double* col, std::size_t ld, std::size_t offset) {
  const auto ph = static_cast<std::ptrdiff_t>(g.pad.h);
  const auto pw = static_cast<std::ptrdiff_t>(g.pad.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
        double* dst = col + row * ld + offset;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride.h + ki) - ph;
          double* d = dst + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(d, d + g.out_w, 0.0);
            continue;
          }
          const double* src = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride.w + kj) - pw;
            d[ow] = (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into a [C,H,W] image.
void col2im(const double* col, const ConvGeom& g, double* x, std::size_t ld, std::size_t offset) {
  const auto ph = static_cast<std::ptrdiff_t>(g.pad.h);
  const auto pw = static_cast<std::ptrdiff_t>(g.pad.w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj, ++row) {
        const double* srcrow = col + row * ld + offset;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride.h + ki) - ph;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.height)) continue;
          double* dst = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const double* s = srcrow + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride.w + kj) - pw;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.width)) dst[iw] += s[ow];
          }
        }
      }
    }
  }
}

// [N, C, P] <-> [C, N*P]
void to_channel_major(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + (i * c + ch) * p, p, dst + ch * (n * p) + i * p);
}

void from_channel_major(const double* src, std::size_t n, std::size_t c, std::size_t p, double* dst) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      std::copy_n(src + ch * (n * p) + i * p, p, dst + (i * c + ch) * p);
}

[[noreturn]] void axis_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

void check_common(const char* op, const Tensor& input, const Tensor& weight, std::size_t in_channel_axis_w,
                  std::size_t out_channels, const Tensor& bias, Pair2 stride, bool odd_kernel) {
  if (input.rank() != 4) axis_error(op, "input must be [N,C,H,W], got " + to_string(input.shape()));
  if (weight.rank() != 4) axis_error(op, "weight must be rank 4, got " + to_string(weight.shape()));
  if (weight.dim(in_channel_axis_w) != input.dim(1)) {
    axis_error(op, "channel axis (1) of input is " + std::to_string(input.dim(1)) + " but weight axis " +
                       std::to_string(in_channel_axis_w) + " is " + std::to_string(weight.dim(in_channel_axis_w)));
  }
  if (odd_kernel && weight.dim(2) % 2 == 0) axis_error(op, "kernel height axis (2) must be odd");
  if (odd_kernel && weight.dim(3) % 2 == 0) axis_error(op, "kernel width axis (3) must be odd");
  if (stride.h == 0 || stride.w == 0) axis_error(op, "stride must be positive");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_channels)) {
    axis_error(op, "bias must be [" + std::to_string(out_channels) + "], got " + to_string(bias.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair2 stride, Pair2 padding) {
  check_common("conv2d", input, weight, 1, weight.dim(0), bias, stride, true);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (h + 2 * padding.h < kh) axis_error("conv2d", "height axis (2) smaller than kernel after padding");
  if (w + 2 * padding.w < kw) axis_error("conv2d", "width axis (3) smaller than kernel after padding");

  ConvGeom g{cin, h, w, kh, kw, stride, padding, (h + 2 * padding.h - kh) / stride.h + 1,
             (w + 2 * padding.w - kw) / stride.w + 1};
  const std::size_t k = cin * kh * kw, p = g.out_h * g.out_w, np = n * p;

  Scratch col(k * np);
  const double* x = input.data().data();
  for (std::size_t i = 0; i < n; ++i) im2col(x + i * cin * h * w, g, col.data(), np, i * p);

  const Scratch wcopy = aligned_copy(weight.data());
  Scratch out_cm(cout * np);
  AMutMap(out_cm.data(), cout, np).noalias() = AConstMap(wcopy.data(), cout, k) * AConstMap(col.data(), k, np);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t co = 0; co < cout; ++co) {
      double* row = out_cm.data() + co * np;
      for (std::size_t j = 0; j < np; ++j) row[j] += b[co];
    }
  }
  std::vector<double> out(n * cout * p);
  from_channel_major(out_cm.data(), n, cout, p, out.data());

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      Shape{n, cout, g.out_h, g.out_w}, std::move(out), std::move(inputs),
      [g, n, cout, k, p, np](detail::Node& self) {
        auto& xin = *self.inputs[0];
        auto& wt = *self.inputs[1];
        Scratch g_cm(cout * np);
        to_channel_major(self.grad.data(), n, cout, p, g_cm.data());
        const AConstMap gm(g_cm.data(), cout, np);

        if (wt.requires_grad) {
          Scratch col(k * np);
          for (std::size_t i = 0; i < n; ++i)
            im2col(xin.value.data() + i * g.channels * g.height * g.width, g, col.data(), np, i * p);
          Scratch dw(cout * k);
          AMutMap(dw.data(), cout, k).noalias() = gm * AConstMap(col.data(), k, np).transpose();
          add_into(wt.ensure_grad(), dw);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            const double* row = g_cm.data() + co * np;
            double s = 0.0;
            for (std::size_t j = 0; j < np; ++j) s += row[j];
            gb[co] += s;
          }
        }
        if (xin.requires_grad) {
          const Scratch wcopy = aligned_copy(wt.value);
          Scratch dcol(k * np);
          AMutMap(dcol.data(), k, np).noalias() = AConstMap(wcopy.data(), cout, k).transpose() * gm;
          auto& gx = xin.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            col2im(dcol.data(), g, gx.data() + i * g.channels * g.height * g.width, np, i * p);
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair2 stride,
                        Pair2 padding) {
  check_common("conv_transpose2d", input, weight, 0, weight.dim(1), bias, stride, false);
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (stride.h * (h - 1) + kh <= 2 * padding.h || stride.w * (w - 1) + kw <= 2 * padding.w) {
    axis_error("conv_transpose2d", "padding leaves an empty output");
  }
  const std::size_t oh = stride.h * (h - 1) + kh - 2 * padding.h;
  const std::size_t ow = stride.w * (w - 1) + kw - 2 * padding.w;

  // The output image plays the role of the conv2d input; `input` positions are
  // the conv2d output positions.
  ConvGeom g{cout, oh, ow, kh, kw, stride, padding, h, w};
  const std::size_t k = cout * kh * kw, p = h * w, np = n * p;

  Scratch x_cm(cin * np);
  to_channel_major(input.data().data(), n, cin, p, x_cm.data());
  const Scratch wcopy = aligned_copy(weight.data());
  Scratch col(k * np);
  AMutMap(col.data(), k, np).noalias() = AConstMap(wcopy.data(), cin, k).transpose() * AConstMap(x_cm.data(), cin, np);

  std::vector<double> out(n * cout * oh * ow, 0.0);
  for (std::size_t i = 0; i < n; ++i) col2im(col.data(), g, out.data() + i * cout * oh * ow, np, i * p);
  if (bias.defined()) {
    const auto b = bias.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t co = 0; co < cout; ++co) {
        double* plane = out.data() + (i * cout + co) * oh * ow;
        for (std::size_t j = 0; j < oh * ow; ++j) plane[j] += b[co];
      }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      Shape{n, cout, oh, ow}, std::move(out), std::move(inputs),
      [g, n, cin, cout, k, p, np](detail::Node& self) {
        auto& xin = *self.inputs[0];
        auto& wt = *self.inputs[1];
        const std::size_t plane = g.height * g.width;
        Scratch gcol(k * np);
        for (std::size_t i = 0; i < n; ++i) im2col(self.grad.data() + i * cout * plane, g, gcol.data(), np, i * p);
        const AConstMap gc(gcol.data(), k, np);

        if (wt.requires_grad) {
          Scratch x_cm(cin * np);
          to_channel_major(xin.value.data(), n, cin, p, x_cm.data());
          Scratch dw(cin * k);
          AMutMap(dw.data(), cin, k).noalias() = AConstMap(x_cm.data(), cin, np) * gc.transpose();
          add_into(wt.ensure_grad(), dw);
        }
        if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
          auto& gb = self.inputs[2]->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t co = 0; co < cout; ++co) {
              const double* pl = self.grad.data() + (i * cout + co) * plane;
              double s = 0.0;
              for (std::size_t j = 0; j < plane; ++j) s += pl[j];
              gb[co] += s;
            }
        }
        if (xin.requires_grad) {
          const Scratch wcopy = aligned_copy(wt.value);
          Scratch dx_cm(cin * np);
          AMutMap(dx_cm.data(), cin, np).noalias() = AConstMap(wcopy.data(), cin, k) * gc;
          std::vector<double> dx(n * cin * p);
          from_channel_major(dx_cm.data(), n, cin, p, dx.data());
          auto& gx = xin.ensure_grad();
          for (std::size_t j = 0; j < dx.size(); ++j) gx[j] += dx[j];
        }
      });
}

}  // namespace raddet
