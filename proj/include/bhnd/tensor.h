#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bhnd/shape.h"

namespace bhnd {

namespace detail {

// One vertex of the autograd tape. Results of differentiable ops hold their
// inputs and a backward rule; leaves hold neither.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

/// Process-wide switch consulted when ops record themselves on the tape.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

/// Disables tape recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Row-major n-dimensional array with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same node. Ops never write
/// into their inputs; the only in-place writers are optimizers and checkpoint
/// loading, through mutable_data() on leaf tensors.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> values);
  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data();
  T item() const;
  T at(std::int64_t flat_index) const { return node_->data.at(static_cast<std::size_t>(flat_index)); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  /// Gradient buffer; allocated as zeros on first access.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  Tensor grad_tensor() const;
  void zero_grad();

  /// New leaf holding a copy of the values and no tape linkage.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

  /// Builds an op result. Tape linkage is recorded only when grad mode is on
  /// and at least one input requires grad.
  static Tensor make_result(Shape shape, std::vector<T> values, const char* op,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node<T>&)> backward);

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// leaf that requires grad; interior nodes release their saved state after
/// propagation, so each graph supports a single sweep.
template <typename T>
void backward(const Tensor<T>& loss);

/// Adds g into node.grad (allocating it if needed) when the node tracks grads.
template <typename T>
void accumulate(detail::Node<T>& node, std::span<const T> g);

}  // namespace bhnd
