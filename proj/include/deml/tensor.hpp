#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deml {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

// One vertex of the computation graph. `backward` reads `grad` and
// accumulates into the gradients of `inputs`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<double> ensure_grad();
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
//
// A Tensor is a cheap handle: copies alias the same storage, which is what
// lets parameters be shared between graph nodes and an optimizer. Use
// clone() for an independent copy.
class Tensor {
 public:
  // Empty handle; only empty() and assignment are valid on it.
  Tensor();
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor from(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  bool empty() const { return node_ == nullptr; }

  std::span<const double> values() const;
  std::span<double> values();
  double operator[](std::size_t i) const { return values()[i]; }
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on = true);

  // The gradient buffer exists once backward() has reached this tensor.
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad();
  void zero_grad();
  void clear_grad();

  // Seeds d(self)/d(self) = 1 and propagates through the graph. Requires a
  // single-element tensor.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node);
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. When no input requires a gradient the result is a
// plain constant and the backward closure is dropped.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward);

// While alive, ops on this thread record no graph. Used for evaluation.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Gradient buffer of input `k` of `self`, allocated on first use. Empty
// when that input does not participate in differentiation.
std::span<double> input_grad(detail::Node& self, std::size_t k);

}  // namespace deml
