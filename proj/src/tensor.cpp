#include "deml/tensor.hpp"

#include <algorithm>
#include <unordered_set>
#include <utility>

#include "deml/errors.hpp"

namespace deml {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

std::span<double> Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, double fill)
    : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : node_(std::make_shared<detail::Node>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor::Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> v;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(v));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::values() { return node_->value; }

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
  return *this;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad() { return node_->grad; }

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::clear_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (size() != 1) {
    throw DimensionError("backward() needs a single-element output, got " +
                         shape_string(shape()));
  }
  if (!node_->requires_grad) {
    throw GradientError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate gradients start from zero on every pass; leaves accumulate.
  for (detail::Node* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor Tensor::detach() const {
  return Tensor(node_->shape, node_->value);
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->value);
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::span<double> input_grad(detail::Node& self, std::size_t k) {
  detail::Node& in = *self.inputs.at(k);
  if (!in.requires_grad) return {};
  return in.ensure_grad();
}

}  // namespace deml
