#include "pfseg/losses.hpp"

#include <cmath>
#include <cstdint>
#include <string>

namespace pfseg {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + dims_str(a.shape()) + " vs " +
                     dims_str(b.shape()));
}

template <typename T>
void require_binary(const Tensor<T>& y, const char* what) {
  const T* v = y.data().data();
  const std::int64_t n = y.size();
  for (std::int64_t i = 0; i < n; ++i)
    if (v[i] != T(0) && v[i] != T(1))
      throw ValidationError(std::string(what) + ": mask must be binary");
}

template <typename T>
Tensor<T> one_scalar() {
  return Tensor<T>::full({1}, T(1));
}

}  // namespace

template <typename T>
Tensor<T> srt_loss(const Tensor<T>& o_srt, const Tensor<T>& x_hr) {
  require_same_shape(o_srt, x_hr, "srt_loss");
  return reduce_mean(square(sub(o_srt, x_hr)));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
  require_same_shape(p, y, "bce_loss");
  require_binary(y, "bce_loss");
  const T eps = static_cast<T>(1e-7);
  Tensor<T> ones = Tensor<T>::full(p.shape(), T(1));
  Tensor<T> pc = clamp(p, eps, T(1) - eps);
  Tensor<T> pos = mul(y, log(pc));
  Tensor<T> neg = mul(sub(ones, y), log(sub(ones, pc)));
  return scale(reduce_mean(add(pos, neg)), T(-1));
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y) {
  require_same_shape(p, y, "dice_loss");
  require_binary(y, "dice_loss");
  Tensor<T> one = one_scalar<T>();
  Tensor<T> num = add(scale(reduce_sum(mul(p, y)), T(2)), one);
  Tensor<T> den = add(add(reduce_sum(p), reduce_sum(y)), one);
  return sub(one, mul(num, reciprocal(den)));
}

template <typename T>
Tensor<T> ust_loss(const Tensor<T>& p, const Tensor<T>& y) {
  return add(bce_loss(p, y), dice_loss(p, y));
}

template <typename T>
double dice_eval(const Tensor<T>& p, const Tensor<T>& y) {
  require_same_shape(p, y, "dice_eval");
  require_binary(y, "dice_eval");
  const T* pv = p.data().data();
  const T* yv = y.data().data();
  const std::int64_t n = p.size();
  double inter = 0.0, pred = 0.0, truth = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double b = pv[i] > T(0.5) ? 1.0 : 0.0;
    inter += b * static_cast<double>(yv[i]);
    pred += b;
    truth += static_cast<double>(yv[i]);
  }
  return (2.0 * inter + 1.0) / (pred + truth + 1.0);
}

template <typename T>
FusionPair<T> fuse(const Tensor<T>& o_srt, const Tensor<T>& o_ust, const Tensor<T>& x_hr,
                   const Tensor<T>& gt_mask) {
  require_same_shape(o_srt, o_ust, "fuse");
  require_same_shape(o_srt, x_hr, "fuse");
  require_same_shape(o_srt, gt_mask, "fuse");
  return FusionPair<T>{mul(o_srt, o_ust), mul(x_hr, gt_mask)};
}

template <typename T>
Tensor<T> tel_loss(const FusionPair<T>& pair) {
  require_same_shape(pair.o_fusion, pair.gt_fusion, "tel_loss");
  return reduce_mean(square(sub(pair.o_fusion, pair.gt_fusion)));
}

template <typename T>
Tensor<T> tel_loss_target_only(const FusionPair<T>& pair, const Tensor<T>& gt_mask) {
  require_same_shape(pair.o_fusion, pair.gt_fusion, "tel_loss_target_only");
  require_same_shape(pair.o_fusion, gt_mask, "tel_loss_target_only");
  require_binary(gt_mask, "tel_loss_target_only");
  std::int64_t count = 0;
  const T* m = gt_mask.data().data();
  for (std::int64_t i = 0; i < gt_mask.size(); ++i) count += m[i] == T(1) ? 1 : 0;
  if (count == 0)
    throw ValidationError("tel_loss_target_only: mask is empty");
  Tensor<T> masked = mul(sub(pair.o_fusion, pair.gt_fusion), gt_mask);
  return scale(reduce_sum(square(masked)), T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> ssl_loss(const FusionPair<T>& pair) {
  require_same_shape(pair.o_fusion, pair.gt_fusion, "ssl_loss");
  if (pair.o_fusion.rank() < 2) throw ShapeError("ssl_loss expects rank >= 2");
  const std::int64_t c = pair.o_fusion.extent(0);
  const std::int64_t l = pair.o_fusion.size() / c;
  // Channel-major storage means the [C,L] view is A^T for the [L,C] unfolding.
  Tensor<T> ma = reshape(pair.o_fusion, {c, l});
  Tensor<T> mb = reshape(pair.gt_fusion, {c, l});
  Tensor<T> naa = reduce_sum(square(matmul(ma, transpose2(ma))));
  Tensor<T> nab = reduce_sum(square(matmul(ma, transpose2(mb))));
  Tensor<T> nbb = reduce_sum(square(matmul(mb, transpose2(mb))));
  Tensor<T> v = sub(add(naa, nbb), scale(nab, T(2)));
  return scale(v, T(1) / (static_cast<T>(l) * static_cast<T>(l)));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_ust, const Tensor<T>& l_srt, const Tensor<T>& l_tel,
                     const Tensor<T>& l_ssl, const LossWeights<T>& weights) {
  if (weights.w_srt < T(0) || weights.w_tfm < T(0))
    throw ValidationError("total_loss: weights must be non-negative");
  const struct {
    const char* name;
    const Tensor<T>* t;
  } parts[] = {{"ust", &l_ust}, {"srt", &l_srt}, {"tel", &l_tel}, {"ssl", &l_ssl}};
  for (const auto& part : parts) {
    if (part.t->size() != 1)
      throw ShapeError(std::string("total_loss: ") + part.name + " component is not scalar");
    if (!std::isfinite(static_cast<double>(part.t->value())))
      throw RuntimeFailure(std::string("total_loss: non-finite ") + part.name + " component");
  }
  return add(l_ust, add(scale(l_srt, weights.w_srt), scale(add(l_tel, l_ssl), weights.w_tfm)));
}

#define PFSEG_INSTANTIATE_LOSSES(T)                                                       \
  template Tensor<T> srt_loss<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> ust_loss<T>(const Tensor<T>&, const Tensor<T>&);                     \
  template double dice_eval<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template FusionPair<T> fuse<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                 const Tensor<T>&);                                       \
  template Tensor<T> tel_loss<T>(const FusionPair<T>&);                                   \
  template Tensor<T> tel_loss_target_only<T>(const FusionPair<T>&, const Tensor<T>&);     \
  template Tensor<T> ssl_loss<T>(const FusionPair<T>&);                                   \
  template Tensor<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                   const Tensor<T>&, const LossWeights<T>&);

PFSEG_INSTANTIATE_LOSSES(float)
PFSEG_INSTANTIATE_LOSSES(double)
#undef PFSEG_INSTANTIATE_LOSSES

}  // namespace pfseg
