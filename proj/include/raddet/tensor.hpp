#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace raddet {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

// One record of the reverse-mode graph. A node owns its value and gradient
// buffers; non-leaf nodes also hold their inputs and the closure that pushes
// the node's gradient into them.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;     // creation order, used as the tape order
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float64 tensor participating in reverse-mode autodiff.
///
/// Copies are shallow handles: two `Tensor`s copied from one another refer to
/// the same node. Values of non-leaf tensors are never mutated after the op
/// that produced them returns.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zeros
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad);

  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access. Intended for leaves (parameters, inputs); writing to
  // an op result after it has been consumed invalidates its gradients.
  std::span<double> data_mut();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  /// Reverse pass from a scalar. Accumulates into every reachable leaf that
  /// requires grad, then releases the intermediate graph.
  void backward() const;

  /// Deep copy of the value with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
};

/// Wraps a freshly computed value as an op output. The backward closure is
/// recorded only when gradients are enabled and some input requires them.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Finite-value checking on every op result. Defaults to on in builds without
// NDEBUG; the RADDET_DEBUG_CHECKS environment variable ("0"/"1") overrides.
bool debug_checks();
void set_debug_checks(bool on);

}  // namespace raddet
