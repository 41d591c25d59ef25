#pragma once

// Dense NCHW tensors with a tape-free reverse-mode autodiff graph.
//
// A Tensor is a cheap handle onto a shared node. Ops that see at least one
// input with requires_grad (while gradient recording is enabled) return a
// node that remembers its parents and a closure that pushes the output
// gradient back into them. backward() walks that graph once in reverse
// topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hypkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  // Returns the gradient buffer, allocating it zero-filled on first use.
  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data,
                          bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const noexcept {
    return node_ && node_->grad.size() == node_->data.size();
  }
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  // Copy of the values with no graph attached.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace autograd {

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds the output node of an op. The backward closure is kept only when
// recording is enabled and some parent requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward,
                      const char* op);

// Accumulates the gradient of `loss` into every reachable leaf that
// requires one. Non-leaf gradients are reset on every call, leaf gradients
// accumulate across calls.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace autograd

template <typename T>
void backward(const Tensor<T>& loss) {
  autograd::backward(loss);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace hypkit
