#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vidqa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  // Parent handles keep the recorded graph alive; the backprop closure holds
  // raw pointers into the same nodes.
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;
};

}  // namespace detail

// While a guard is alive on the current thread, newly created tensors record
// no graph structure and never require gradients. Used for evaluation-only
// forward passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Value plus position in a dynamically recorded computation graph. Handles
// share the underlying node, so gradients are keyed by tensor identity.
// Supports rank-1 and rank-2 shapes; payload is row-major double.
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Shape shape, std::vector<double> value, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& value() const { return node_->value; }
  // Mutable payload access, intended for leaves (optimizer updates, finite
  // differences). Mutating an interior node invalidates recorded gradients.
  std::vector<double>& raw_value() { return node_->value; }
  const std::vector<double>& grad() const;
  bool requires_grad() const { return node_->requires_grad; }

  double item() const;
  double at(std::size_t r, std::size_t c) const;

  // Reverse pass from a scalar root. Visits every recorded operation in the
  // subgraph exactly once, in reverse topological order, accumulating into
  // leaf grads.
  void backward() const;
  void zero_grad() const;

  const void* id() const { return node_.get(); }
  detail::TensorNode* node() const { return node_.get(); }

  // Op constructor: requires_grad is inherited from parents unless grads are
  // globally disabled; parents/backprop are dropped for non-grad results.
  static Tensor make(Shape shape, std::vector<double> value,
                     const std::vector<Tensor>& parents,
                     std::function<void(detail::TensorNode&)> backprop);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

}  // namespace vidqa
