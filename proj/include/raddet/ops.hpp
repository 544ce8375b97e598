#pragma once

#include <cstddef>

#include "raddet/tensor.hpp"

namespace raddet {

/// Per-axis stride or padding for 2-D convolutions. RD/AD encoders stride the
/// range/angle axis and the Doppler axis differently.
struct Pair2 {
  std::size_t h = 1;
  std::size_t w = 1;
  constexpr Pair2() = default;
  constexpr Pair2(std::size_t both) : h(both), w(both) {}  // NOLINT(google-explicit-constructor)
  constexpr Pair2(std::size_t h_, std::size_t w_) : h(h_), w(w_) {}
  friend constexpr bool operator==(const Pair2&, const Pair2&) = default;
};

// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair2 stride, Pair2 padding);

// input [N,Cin,H,W], weight [Cin,Cout,kh,kw] (the layout of the conv2d it is
// the adjoint of), bias [Cout] or undefined.
// Output spatial size is stride*(H-1) + k - 2*padding per axis.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Pair2 stride,
                        Pair2 padding);

// [B,M,K] x [B,K,N] -> [B,M,N]
Tensor batched_matmul(const Tensor& a, const Tensor& b);

// Swaps the last two axes of a rank-3 tensor.
Tensor transpose_last2(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

Tensor softmax_lastdim(const Tensor& x);

// Normalizes each (n, h, w) location over the channel axis of [N,C,H,W].
Tensor layernorm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// alpha holds one slope per channel (axis 1).
Tensor prelu(const Tensor& x, const Tensor& alpha);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Training mode normalizes with batch statistics and updates `state` with the
// given momentum; eval mode normalizes with `state`.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training, double momentum = 0.1, double eps = 1e-5);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sum(const Tensor& x);

}  // namespace raddet
