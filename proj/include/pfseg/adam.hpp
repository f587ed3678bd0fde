#pragma once

#include "pfseg/tensor.hpp"

namespace pfseg {

// Moments live outside the graph, indexed parallel to the parameter list the
// state was initialized from. Parameter order must stay fixed across steps.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t t = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);

  static AdamState init(const std::vector<Tensor<T>>& params);
};

// Standard bias-corrected update; parameters without a populated grad are
// treated as zero-gradient.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr);

extern template struct AdamState<float>;
extern template struct AdamState<double>;
extern template void adam_step<float>(std::vector<Tensor<float>>&, AdamState<float>&, float);
extern template void adam_step<double>(std::vector<Tensor<double>>&, AdamState<double>&,
                                       double);

}  // namespace pfseg
