#include "pfseg/adam.hpp"

#include <cmath>
#include <string>

namespace pfseg {

template <typename T>
AdamState<T> AdamState<T>::init(const std::vector<Tensor<T>>& params) {
  AdamState<T> s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.emplace_back(p.data().size(), T(0));
    s.v.emplace_back(p.data().size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr) {
  if (params.size() != state.m.size())
    throw ValidationError("adam_step: state tracks " + std::to_string(state.m.size()) +
                          " parameters, got " + std::to_string(params.size()));
  ++state.t;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1),
                                               static_cast<double>(state.t)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2),
                                               static_cast<double>(state.t)));
  // Plain loops on purpose: expression libraries peel scalar iterations up to
  // the destination's SIMD alignment boundary, so with FMA enabled the
  // per-element rounding would depend on where the heap placed the buffer.
  const T b1 = state.beta1, b2 = state.beta2;
  const T step = lr / bc1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const std::size_t n = p.data().size();
    if (state.m[i].size() != n)
      throw ValidationError("adam_step: parameter " + std::to_string(i) +
                            " changed size under the optimizer");
    p.grad();  // materializes zeros when backward never reached this leaf
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    T* w = p.data().data();
    const T* g = p.node()->grad.data();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * (g[j] * g[j]);
      w[j] -= step * m[j] / (std::sqrt(v[j] / bc2) + state.eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<Tensor<float>>&, AdamState<float>&, float);
template void adam_step<double>(std::vector<Tensor<double>>&, AdamState<double>&, double);

}  // namespace pfseg
