#pragma once

#include "pfseg/ops.hpp"

namespace pfseg {

// Weighted objective: total = l_ust + w_srt*l_srt + w_tfm*(l_tel + l_ssl).
template <typename T>
struct LossWeights {
  T w_srt = T(0.5);
  T w_tfm = T(0.5);
};

// o_fusion = o_srt * o_ust (soft); gt_fusion = x_hr * gt_mask.
template <typename T>
struct FusionPair {
  Tensor<T> o_fusion;
  Tensor<T> gt_fusion;
};

// Mean squared error over all elements.
template <typename T>
Tensor<T> srt_loss(const Tensor<T>& o_srt, const Tensor<T>& x_hr);

// Binary cross-entropy with p clamped to [1e-7, 1-1e-7]; y must be binary.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y);

// Soft dice loss 1 - (2*sum(p*y)+1)/(sum(p)+sum(y)+1); y must be binary.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y);

template <typename T>
Tensor<T> ust_loss(const Tensor<T>& p, const Tensor<T>& y);

// Evaluation-mode dice: p binarized at 0.5 (strictly greater), smoothing 1.
// Not differentiable; runs off the tape.
template <typename T>
double dice_eval(const Tensor<T>& p, const Tensor<T>& y);

template <typename T>
FusionPair<T> fuse(const Tensor<T>& o_srt, const Tensor<T>& o_ust, const Tensor<T>& x_hr,
                   const Tensor<T>& gt_mask);

// Mean squared fusion error over all voxels.
template <typename T>
Tensor<T> tel_loss(const FusionPair<T>& pair);

// Variant restricted to mask voxels and normalized by their count; the mask
// must be binary and non-empty.
template <typename T>
Tensor<T> tel_loss_target_only(const FusionPair<T>& pair, const Tensor<T>& gt_mask);

// Structure-similarity loss (1/L^2)*||A A^T - B B^T||_F^2 with A,B the [L,C]
// unfoldings of the pair, evaluated through C-by-C Gram factors:
// ||AA^T-BB^T||_F^2 = ||A^T A||_F^2 - 2||A^T B||_F^2 + ||B^T B||_F^2.
template <typename T>
Tensor<T> ssl_loss(const FusionPair<T>& pair);

// Rejects non-finite components by name before combining.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_ust, const Tensor<T>& l_srt, const Tensor<T>& l_tel,
                     const Tensor<T>& l_ssl, const LossWeights<T>& weights = {});

}  // namespace pfseg
