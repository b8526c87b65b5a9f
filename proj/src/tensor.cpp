#include "vidqa/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "vidqa/errors.hpp"

namespace vidqa {

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape.empty() || shape.size() > 2)
    throw ShapeError("tensor rank must be 1 or 2, got " + shape_str(shape));
  if (shape_numel(shape) != value.size())
    throw ShapeError("payload size " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad && grad_enabled();
  if (node->requires_grad) node->grad.assign(node->value.size(), 0.0);
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), fill);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return leaf(Shape{1}, std::vector<double>{v}, requires_grad);
}

std::size_t Tensor::rows() const {
  return node_->shape.size() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  return node_->shape.size() == 2 ? node_->shape[1] : node_->shape[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_->requires_grad)
    throw StateError("grad requested for a tensor that does not require gradients");
  return node_->grad;
}

double Tensor::item() const {
  if (node_->value.size() != 1)
    throw ShapeError("item() requires a scalar, got " + shape_str(node_->shape));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value[r * cols() + c];
}

Tensor Tensor::make(Shape shape, std::vector<double> value,
                    const std::vector<Tensor>& parents,
                    std::function<void(detail::TensorNode&)> backprop) {
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents)
      if (p.defined() && p.requires_grad()) needs = true;
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = needs;
  if (needs) {
    node->grad.assign(node->value.size(), 0.0);
    node->parents.reserve(parents.size());
    for (const Tensor& p : parents) node->parents.push_back(p.node_);
    node->backprop = std::move(backprop);
  }
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

void Tensor::backward() const {
  if (!node_) throw StateError("backward on an undefined tensor");
  if (node_->value.size() != 1)
    throw ShapeError("backward requires a scalar root, got " + shape_str(node_->shape));
  if (!node_->requires_grad)
    throw StateError("backward on a tensor that does not require gradients");

  // Iterative post-order DFS; post-order lists parents before consumers, so
  // reverse iteration gives the reverse topological visit order.
  std::vector<detail::TensorNode*> topo;
  std::unordered_set<detail::TensorNode*> visited;
  struct Frame {
    detail::TensorNode* node;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      detail::TensorNode* p = f.node->parents[f.next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  node_->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

void Tensor::zero_grad() const {
  if (node_ && node_->requires_grad)
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

}  // namespace vidqa
