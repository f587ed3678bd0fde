#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "pfseg/common.hpp"

namespace pfseg {

// Extents in channels-first order: activations [C,W,H,D], conv kernels
// [Cout,Cin,kW,kH,kD], matrices [M,N], vectors [N].
using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first use, mirrors data
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order; parents always have smaller ids
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(TensorNode<T>&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Value handle over a shared autodiff node. Copies are shallow.
//
// Storage layout is x-fastest within a channel, channel-major:
//   rank 4: idx(c,x,y,z) = ((c*D + z)*H + y)*W + x
//   rank 5: idx(co,ci,kx,ky,kz) = ((((co*Ci + ci)*kD + kz)*kH + ky)*kW + kx
//   rank 2: row-major
template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
  std::int64_t extent(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  std::uint64_t id() const { return node_->id; }
  const char* op() const { return node_->op; }

  T value() const { return node_->data[0]; }  // scalar tensors

  T& at4(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) {
    const Shape& s = node_->shape;
    return node_->data[static_cast<std::size_t>(((c * s[3] + z) * s[2] + y) * s[1] + x)];
  }
  T at4(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) const {
    const Shape& s = node_->shape;
    return node_->data[static_cast<std::size_t>(((c * s[3] + z) * s[2] + y) * s[1] + x)];
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

namespace detail {

std::uint64_t next_node_id();

template <typename T>
std::shared_ptr<TensorNode<T>> new_node(Shape shape, const char* op) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data.assign(static_cast<std::size_t>(shape_numel(n->shape)), T(0));
  n->op = op;
  n->id = next_node_id();
  return n;
}

// Grad-mode switch: when off, ops skip recording parents/backward closures.
bool grad_enabled();
void set_grad_enabled(bool v);

// NaN/Inf screen for op outputs; active only in debug builds.
template <typename T>
void debug_check_finite(const TensorNode<T>& n, const char* op);

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Nodes reachable from a root, ascending by creation id. Parents precede
// children, so the list is a topological order.
template <typename T>
struct Graph {
  std::vector<std::shared_ptr<TensorNode<T>>> nodes;
  static Graph from_root(const Tensor<T>& root);
};

extern template struct Graph<float>;
extern template struct Graph<double>;

// Populates grads of every requires_grad leaf reachable from `loss`.
// Leaf grads accumulate across calls; intermediate grads are rebuilt.
template <typename T>
void backward(const Tensor<T>& loss);

extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

// Records which conv kernels a forward pass touches; used by the
// inference-path probe that asserts the SRT decoder stays cold.
struct OpProbe {
  static void start();
  static void stop();
  static bool active();
  static void record_kernel(std::uint64_t id);
  static const std::vector<std::uint64_t>& kernels();
  static std::uint64_t conv_calls();
  static void count_conv();
};

}  // namespace pfseg
