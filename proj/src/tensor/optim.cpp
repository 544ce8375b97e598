#include "raddet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "raddet/rng.hpp"

namespace raddet {

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr, const AdamConfig& config) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), 0.0);
      state.v.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
                                std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for parameter " + std::to_string(i) + " " +
                                  to_string(p.shape()));
    }
    auto w = p.data_mut();
    const auto g = p.grad();
    const bool has = !g.empty();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    state_.m.emplace_back(p.numel(), 0.0);
    state_.v.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) { adam_step(params_, state_, lr, config_); }

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double h,
                           std::size_t max_coords_per_tensor, std::uint64_t seed, double floor) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) {
    const auto g = x.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(x.numel(), 0.0);
  }

  Rng rng(seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].data_mut();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_tensor != 0 && coords.size() > max_coords_per_tensor) {
      for (std::size_t i = 0; i < max_coords_per_tensor; ++i) {
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      }
      coords.resize(max_coords_per_tensor);
    }
    for (std::size_t idx : coords) {
      const double orig = values[idx];
      values[idx] = orig + h;
      const double fp = f().item();
      values[idx] = orig - h;
      const double fm = f().item();
      values[idx] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][idx];
      const double err = std::abs(a - numeric) / std::max(floor, std::abs(a) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_tensor = t;
        result.worst_index = idx;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  for (auto& x : inputs) x.zero_grad();
  return result;
}

}  // namespace raddet
