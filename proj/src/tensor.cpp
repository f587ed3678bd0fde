#include "pfseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace pfseg {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t e : s) n *= e;
  return n;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace detail {

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool v) { g_grad_enabled = v; }

template <typename T>
void debug_check_finite(const TensorNode<T>& n, const char* op) {
#ifndef NDEBUG
  for (T v : n.data) {
    if (!std::isfinite(static_cast<double>(v)))
      throw RuntimeFailure(std::string("non-finite value produced by op ") + op);
  }
#else
  (void)n;
  (void)op;
#endif
}

template void debug_check_finite<float>(const TensorNode<float>&, const char*);
template void debug_check_finite<double>(const TensorNode<double>&, const char*);

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  auto n = detail::new_node<T>(std::move(shape), "leaf");
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto t = zeros(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + dims_str(shape));
  auto n = detail::new_node<T>(std::move(shape), "leaf");
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor<T>(std::move(n));
}

template class Tensor<float>;
template class Tensor<double>;

template <typename T>
Graph<T> Graph<T>::from_root(const Tensor<T>& root) {
  Graph<T> g;
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::shared_ptr<TensorNode<T>>> stack{root.node()};
  seen.insert(root.id());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    g.nodes.push_back(n);
    for (auto& p : n->parents)
      if (seen.insert(p->id).second) stack.push_back(p);
  }
  std::sort(g.nodes.begin(), g.nodes.end(),
            [](const auto& a, const auto& b) { return a->id < b->id; });
  return g;
}

template struct Graph<float>;
template struct Graph<double>;

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ValidationError("backward requires a scalar loss, got shape " +
                          dims_str(loss.shape()));
  Graph<T> g = Graph<T>::from_root(loss);
  // Fresh intermediate grads each traversal; leaves keep accumulating.
  for (auto& n : g.nodes) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
  }
  auto root = loss.node();
  root->ensure_grad();
  if (root->is_leaf()) {
    root->grad[0] += T(1);
    return;
  }
  root->grad[0] = T(1);
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
    auto& n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

namespace {
thread_local bool g_probe_active = false;
thread_local std::vector<std::uint64_t> g_probe_kernels;
thread_local std::uint64_t g_probe_conv_calls = 0;
}  // namespace

void OpProbe::start() {
  g_probe_active = true;
  g_probe_kernels.clear();
  g_probe_conv_calls = 0;
}
void OpProbe::stop() { g_probe_active = false; }
bool OpProbe::active() { return g_probe_active; }
void OpProbe::record_kernel(std::uint64_t id) {
  if (g_probe_active) g_probe_kernels.push_back(id);
}
const std::vector<std::uint64_t>& OpProbe::kernels() { return g_probe_kernels; }
std::uint64_t OpProbe::conv_calls() { return g_probe_conv_calls; }
void OpProbe::count_conv() {
  if (g_probe_active) ++g_probe_conv_calls;
}

}  // namespace pfseg
