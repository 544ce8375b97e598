#include "raddet/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace raddet {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

bool initial_debug_checks() {
  if (const char* env = std::getenv("RADDET_DEBUG_CHECKS")) {
    return std::string(env) != "0";
  }
#ifdef NDEBUG
  return false;
#else
  return true;
#endif
}

std::atomic<bool> g_debug_checks{initial_debug_checks()};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value, bool requires_grad) {
  if (numel_of(shape) != value.size()) {
    throw std::invalid_argument("tensor value size " + std::to_string(value.size()) +
                                " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape) {
  const auto n = numel_of(shape);
  node_ = new_node(std::move(shape), std::vector<double>(n, 0.0), false);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(new_node(std::move(shape), std::move(values), requires_grad)) {}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return numel_of(shape()); }

std::span<const double> Tensor::data() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::data_mut() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  shape();
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  shape();
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  shape();
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw std::invalid_argument("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!node_->requires_grad) {
    throw std::invalid_argument("backward() on a loss that does not depend on any parameter");
  }

  // Collect the reachable graph; sequence numbers give the execution order.
  // Shared ownership keeps every node alive while inputs are released below.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{node_};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  node_->ensure_grad()[0] += 1.0;
  for (auto& n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (auto& n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  if (g_debug_checks.load(std::memory_order_relaxed)) {
    bool inputs_finite = true;
    for (const auto& in : inputs) {
      for (double v : in.data()) {
        if (!std::isfinite(v)) {
          inputs_finite = false;
          break;
        }
      }
    }
    if (inputs_finite) {
      for (double v : value) {
        if (!std::isfinite(v)) {
          throw std::runtime_error("non-finite value produced from finite inputs, shape " + to_string(shape));
        }
      }
    }
  }

  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(value), needs_grad);
  if (needs_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool debug_checks() { return g_debug_checks.load(); }
void set_debug_checks(bool on) { g_debug_checks.store(on); }

}  // namespace raddet
