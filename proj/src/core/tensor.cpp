#include "hypkit/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "hypkit/errors.hpp"

namespace hypkit {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.size() > 4)
    throw ShapeError("tensor rank above 4: " + shape_str(shape));
}

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data,
                               bool requires_grad) {
  check_shape(shape);
  if (data.size() != shape_numel(shape))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1)
    throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->is_leaf)
    throw UsageError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  return node_->grad_buffer();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_->grad.size() == node_->data.size())
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), node_->data, false);
}

namespace autograd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<Tensor<T>> parents,
                      std::function<void(TensorNode<T>&)> backward,
                      const char* op) {
  auto out = Tensor<T>::from_data(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  node.is_leaf = false;
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  node.requires_grad = true;
  node.parents.reserve(parents.size());
  for (const auto& p : parents) node.parents.push_back(p.node());
  node.backward = std::move(backward);
  return out;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss");
  if (!loss.requires_grad())
    throw UsageError("backward() on a tensor without a recorded graph");

  using NodePtr = TensorNode<T>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second)
        stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (NodePtr n : order)
    if (!n->is_leaf) n->grad.assign(n->data.size(), T(0));
  loss.node()->grad[0] = T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodePtr n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

template Tensor<float> make_result(Shape, std::vector<float>,
                                   std::vector<Tensor<float>>,
                                   std::function<void(TensorNode<float>&)>,
                                   const char*);
template Tensor<double> make_result(Shape, std::vector<double>,
                                    std::vector<Tensor<double>>,
                                    std::function<void(TensorNode<double>&)>,
                                    const char*);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace autograd

template class Tensor<float>;
template class Tensor<double>;

}  // namespace hypkit
