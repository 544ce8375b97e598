#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "raddet/tensor.hpp"

namespace raddet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

/// Adam with bias correction. Parameters without a gradient are treated as
/// having a zero gradient.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step(double lr);
  void zero_grad();

  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  AdamState state_;
};

// Free-function form operating on explicit state; throws on shape mismatch.
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& config = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of scalar `f` with central differences.
/// Relative error per coordinate is |a - n| / max(floor, |a| + |n|); the floor
/// keeps round-off on near-zero gradients from reading as a large ratio.
/// When `max_coords_per_tensor` is nonzero, a seeded subset of coordinates is
/// probed in each tensor instead of all of them.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h = 1e-5,
                           std::size_t max_coords_per_tensor = 0, std::uint64_t seed = 0, double floor = 1e-8);

}  // namespace raddet
