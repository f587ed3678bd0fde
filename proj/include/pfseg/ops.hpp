#pragma once

#include "pfseg/tensor.hpp"

namespace pfseg {

// All ops are cross-correlation / interpolation style forward kernels that
// register reverse-mode rules when grad mode is on and an input needs grad.
// Elementwise ops require equal shapes; the only broadcast is a 1-element
// scalar tensor on either side of add/sub/mul.

// input [Cin,W,H,D], kernel [Cout,Cin,k,k,k], bias [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride = 1, int padding = 0);

// Trilinear, align-corners=false: source coord = (i + 0.5)/factor - 0.5,
// border taps clamped. factor >= 2.
template <typename T>
Tensor<T> upsample_trilinear(const Tensor<T>& input, int factor);

// Per-channel normalization over spatial dims, then affine. Spatial size >= 2.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                        T eps);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, T slope);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);

// Channel stacking, a first; spatial dims must match.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t first, std::int64_t count);

// 2x max pooling; spatial dims must be even.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);  // multiply by a plain constant

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x);
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x);

// a [M,K] x b [K,N] -> [M,N], row-major.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x);
// Gradient passes through wherever lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);
// Natural log; rejects non-positive inputs.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
// Size-preserving relabeling of extents; data order is unchanged.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);
// Rank-2 transpose.
template <typename T>
Tensor<T> transpose2(const Tensor<T>& x);

#define PFSEG_EXTERN_OPS(T)                                                              \
  extern template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&,               \
                                      const Tensor<T>&, int, int);                      \
  extern template Tensor<T> upsample_trilinear<T>(const Tensor<T>&, int);               \
  extern template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&,        \
                                             const Tensor<T>&, T);                      \
  extern template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                         \
  extern template Tensor<T> sigmoid<T>(const Tensor<T>&);                               \
  extern template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);     \
  extern template Tensor<T> slice_channels<T>(const Tensor<T>&, std::int64_t,           \
                                              std::int64_t);                            \
  extern template Tensor<T> max_pool2<T>(const Tensor<T>&);                             \
  extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                 \
  extern template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                 \
  extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                 \
  extern template Tensor<T> square<T>(const Tensor<T>&);                                \
  extern template Tensor<T> scale<T>(const Tensor<T>&, T);                              \
  extern template Tensor<T> reduce_sum<T>(const Tensor<T>&);                            \
  extern template Tensor<T> reduce_mean<T>(const Tensor<T>&);                           \
  extern template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                \
  extern template Tensor<T> reciprocal<T>(const Tensor<T>&);                             \
  extern template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                            \
  extern template Tensor<T> log<T>(const Tensor<T>&);                                    \
  extern template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                  \
  extern template Tensor<T> transpose2<T>(const Tensor<T>&);

PFSEG_EXTERN_OPS(float)
PFSEG_EXTERN_OPS(double)
#undef PFSEG_EXTERN_OPS

}  // namespace pfseg
