#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "raddet/ops.hpp"

namespace raddet {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

// Applies a unary elementwise op whose derivative is expressed through its
// output value y (sigmoid, tanh).
template <typename F, typename D>
Tensor unary_by_output(const Tensor& x, F f, D dfdy) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), f);
  return make_result(x.shape(), std::move(out), {x}, [dfdy](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * dfdy(self.value[i]);
  });
}

}  // namespace

Tensor batched_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3) {
    throw std::invalid_argument("batched_matmul: operands must be rank 3, got " + to_string(a.shape()) + " and " +
                                to_string(b.shape()));
  }
  if (a.dim(0) != b.dim(0)) {
    throw std::invalid_argument("batched_matmul: batch axis (0) differs: " + std::to_string(a.dim(0)) + " vs " +
                                std::to_string(b.dim(0)));
  }
  if (a.dim(2) != b.dim(1)) {
    throw std::invalid_argument("batched_matmul: inner axis mismatch, a axis 2 is " + std::to_string(a.dim(2)) +
                                ", b axis 1 is " + std::to_string(b.dim(1)));
  }
  const std::size_t nb = a.dim(0), m = a.dim(1), kk = a.dim(2), nn = b.dim(2);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(nb * m * nn, 0.0);
  // Each output element accumulates over k in ascending order.
  for (std::size_t c = 0; c < nb; ++c) {
    const double* ap = av.data() + c * m * kk;
    const double* bp = bv.data() + c * kk * nn;
    double* op = out.data() + c * m * nn;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < kk; ++k) {
        const double aik = ap[i * kk + k];
        for (std::size_t j = 0; j < nn; ++j) op[i * nn + j] += aik * bp[k * nn + j];
      }
  }
  return make_result(Shape{nb, m, nn}, std::move(out), {a, b}, [nb, m, kk, nn](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    const double* g = self.grad.data();
    if (an.requires_grad) {
      auto& ga = an.ensure_grad();
      for (std::size_t c = 0; c < nb; ++c)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < kk; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < nn; ++j) s += g[(c * m + i) * nn + j] * bn.value[(c * kk + k) * nn + j];
            ga[(c * m + i) * kk + k] += s;
          }
    }
    if (bn.requires_grad) {
      auto& gb = bn.ensure_grad();
      for (std::size_t c = 0; c < nb; ++c)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t k = 0; k < kk; ++k) {
            const double aik = an.value[(c * m + i) * kk + k];
            for (std::size_t j = 0; j < nn; ++j) gb[(c * kk + k) * nn + j] += aik * g[(c * m + i) * nn + j];
          }
    }
  });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("transpose_last2: expected rank 3, got " + to_string(x.shape()));
  const std::size_t nb = x.dim(0), m = x.dim(1), n = x.dim(2);
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t c = 0; c < nb; ++c)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(c * n + j) * m + i] = v[(c * m + i) * n + j];
  return make_result(Shape{nb, n, m}, std::move(out), {x}, [nb, m, n](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t c = 0; c < nb; ++c)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[(c * m + i) * n + j] += self.grad[(c * n + j) * m + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  const auto v = x.data();
  return make_result(std::move(shape), std::vector<double>(v.begin(), v.end()), {x}, [](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor softmax_lastdim(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * n;
    double* o = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return make_result(x.shape(), std::move(out), {x}, [rows, n](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layernorm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 4) throw std::invalid_argument("layernorm_channels: expected [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw std::invalid_argument("layernorm_channels: gamma/beta must have " + std::to_string(c) + " entries");
  }
  const auto v = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(v.size());
  std::vector<double> xhat(v.size());
  std::vector<double> inv_std(n * hw);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = i * c * hw + p;
      double mean = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) mean += v[base + ch * hw];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = v[base + ch * hw] - mean;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[i * hw + p] = is;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double xh = (v[base + ch * hw] - mean) * is;
        xhat[base + ch * hw] = xh;
        out[base + ch * hw] = gm[ch] * xh + bt[ch];
      }
    }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const double* g = self.grad.data();
        if (gn.requires_grad || bn.requires_grad) {
          auto& gg = gn.ensure_grad();
          auto& gb = bn.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (i * c + ch) * hw + p;
                gg[ch] += g[idx] * xhat[idx];
                gb[ch] += g[idx];
              }
        }
        if (xn.requires_grad) {
          auto& gx = xn.ensure_grad();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t base = i * c * hw + p;
              double s1 = 0.0, s2 = 0.0;
              for (std::size_t ch = 0; ch < c; ++ch) {
                const double dxh = g[base + ch * hw] * gn.value[ch];
                s1 += dxh;
                s2 += dxh * xhat[base + ch * hw];
              }
              const double is = inv_std[i * hw + p];
              for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t idx = base + ch * hw;
                const double dxh = g[idx] * gn.value[ch];
                gx[idx] += is * (dxh - inv_c * s1 - xhat[idx] * inv_c * s2);
              }
            }
        }
      });
}

Tensor prelu(const Tensor& x, const Tensor& alpha) {
  if (x.rank() < 2) throw std::invalid_argument("prelu: input needs a channel axis, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  if (alpha.numel() != c) {
    throw std::invalid_argument("prelu: alpha has " + std::to_string(alpha.numel()) + " entries, channel axis is " +
                                std::to_string(c));
  }
  const auto v = x.data();
  const auto a = alpha.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < inner; ++p) {
        const std::size_t idx = (i * c + ch) * inner + p;
        out[idx] = v[idx] > 0.0 ? v[idx] : a[ch] * v[idx];
      }
  return make_result(x.shape(), std::move(out), {x, alpha}, [n, c, inner](detail::Node& self) {
    auto& xn = *self.inputs[0];
    auto& an = *self.inputs[1];
    const double* g = self.grad.data();
    if (xn.requires_grad) {
      auto& gx = xn.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < inner; ++p) {
            const std::size_t idx = (i * c + ch) * inner + p;
            gx[idx] += xn.value[idx] > 0.0 ? g[idx] : an.value[ch] * g[idx];
          }
    }
    if (an.requires_grad) {
      auto& ga = an.ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          double s = 0.0;
          for (std::size_t p = 0; p < inner; ++p) {
            const std::size_t idx = (i * c + ch) * inner + p;
            if (xn.value[idx] <= 0.0) s += g[idx] * xn.value[idx];
          }
          ga[ch] += s;
        }
    }
  });
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training,
                   double momentum, double eps) {
  if (x.rank() != 4) throw std::invalid_argument("batchnorm2d: expected [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::size_t count = n * hw;
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw std::invalid_argument("batchnorm2d: parameters do not match channel axis (1) of size " + std::to_string(c));
  }
  if (training && count < 2) {
    throw std::invalid_argument("batchnorm2d: training mode needs N*H*W >= 2, got " + std::to_string(count));
  }
  const auto v = x.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(v.size());
  std::vector<double> xhat(v.size());
  std::vector<double> inv_std(c);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      mean = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) mean += v[(i * c + ch) * hw + p];
      mean /= static_cast<double>(count);
      var = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < hw; ++p) {
          const double d = v[(i * c + ch) * hw + p] - mean;
          var += d * d;
        }
      var /= static_cast<double>(count);
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      state.running_mean[ch] = (1.0 - momentum) * state.running_mean[ch] + momentum * mean;
      state.running_var[ch] = (1.0 - momentum) * state.running_var[ch] + momentum * unbiased;
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = is;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t idx = (i * c + ch) * hw + p;
        xhat[idx] = (v[idx] - mean) * is;
        out[idx] = gm[ch] * xhat[idx] + bt[ch];
      }
  }

  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, count, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& xn = *self.inputs[0];
        auto& gn = *self.inputs[1];
        auto& bn = *self.inputs[2];
        const double* g = self.grad.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t idx = (i * c + ch) * hw + p;
              sg += g[idx];
              sgx += g[idx] * xhat[idx];
            }
          if (gn.requires_grad) gn.ensure_grad()[ch] += sgx;
          if (bn.requires_grad) bn.ensure_grad()[ch] += sg;
          if (!xn.requires_grad) continue;
          auto& gx = xn.ensure_grad();
          const double scale = gn.value[ch] * inv_std[ch];
          if (!training) {
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t p = 0; p < hw; ++p) {
                const std::size_t idx = (i * c + ch) * hw + p;
                gx[idx] += scale * g[idx];
              }
            continue;
          }
          const double inv_m = 1.0 / static_cast<double>(count);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t idx = (i * c + ch) * hw + p;
              gx[idx] += scale * (g[idx] - inv_m * sg - xhat[idx] * inv_m * sgx);
            }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto v = x.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary_by_output(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_by_output(x, [](double v) { return std::tanh(v); }, [](double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result(Shape{1}, {s}, {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& gi : g) gi += self.grad[0];
  });
}

}  // namespace raddet
