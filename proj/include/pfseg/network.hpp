#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pfseg/common.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"
#include "pfseg/volume.hpp"

namespace pfseg {

enum class BlockKind { res, msres };

// Multi-task UNet: shared encoder over the LR input, a stride-2 guidance
// stack over the HR patch whose features join the bottleneck, and two
// structurally identical decoders (segmentation head ends in sigmoid, the
// restoration head is linear). Both heads upsample 2x back to HR dims.
struct NetworkConfig {
  std::vector<std::int64_t> stage_channels = {32, 32, 64, 128, 256};
  BlockKind encoder_block = BlockKind::msres;
  BlockKind hgm_block = BlockKind::res;
  std::vector<int> msres_kernels = {3, 5};
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  std::int64_t hgm_channels = 0;  // 0 = derive stage_channels.back()/4, min 1
  bool use_hgm = true;            // off: bottleneck skips the guidance concat
  std::array<std::int64_t, 3> lr_dims = {96, 96, 64};
  std::array<std::int64_t, 3> patch_dims = {48, 48, 32};

  std::int64_t stages() const { return static_cast<std::int64_t>(stage_channels.size()); }
  std::int64_t poolings() const { return stages() - 1; }
  std::int64_t guidance_stages() const { return poolings() - 1; }
  std::int64_t hgm_width() const;
  std::array<std::int64_t, 3> bottleneck_dims() const;
  std::array<std::int64_t, 3> hr_dims() const;  // lr_dims * 2
  void validate() const;
};

NetworkConfig desk_config();   // 4 stages (8,8,16,32), LR 24x24x16
NetworkConfig paper_config();  // 5 stages (32,32,64,128,256), LR 96x96x64

// Named parameter store; iteration order is creation order, which is the
// order the optimizer and the checkpoint file use.
template <typename T>
struct ModelParams {
  std::vector<std::string> names;
  std::unordered_map<std::string, Tensor<T>> by_name;

  void add(const std::string& name, Tensor<T> t);
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool has(const std::string& name) const { return by_name.count(name) != 0; }
  std::vector<Tensor<T>> all() const;  // creation order
  // total element count over parameters whose name starts with prefix
  std::int64_t count(const std::string& prefix = "") const;
};

// He-initialized parameter set; deterministic in (config, seed).
template <typename T>
ModelParams<T> make_params(const NetworkConfig& cfg, std::uint64_t seed);

// Residual block: two k=3 conv->norm->lrelu stages plus a shortcut (1x1x1
// projection when channels or stride change). stride applies to the first
// conv and the projection.
template <typename T>
Tensor<T> res_block(const Tensor<T>& x, const ModelParams<T>& p, const std::string& prefix,
                    const NetworkConfig& cfg, int stride = 1);

// Multi-scale residual block: one conv->norm->lrelu branch per kernel size,
// concatenated, fused by a 1x1x1 conv->norm->lrelu, plus a shortcut.
template <typename T>
Tensor<T> msres_block(const Tensor<T>& x, const ModelParams<T>& p,
                      const std::string& prefix, const NetworkConfig& cfg, int stride = 1);

template <typename T>
struct EncoderOut {
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> skips;  // pre-pool features, shallow to deep
};

template <typename T>
EncoderOut<T> encoder_forward(const Tensor<T>& x_lr, const ModelParams<T>& p,
                              const NetworkConfig& cfg);

template <typename T>
Tensor<T> hgm_forward(const Tensor<T>& x_patch, const ModelParams<T>& p,
                      const NetworkConfig& cfg);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> forward_train(const Tensor<T>& x_lr,
                                              const Tensor<T>& x_patch,
                                              const ModelParams<T>& p,
                                              const NetworkConfig& cfg);

// Segmentation-only path (restoration decoder never evaluated); thresholds
// the sigmoid output at 0.5.
Volume forward_infer(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                     const ModelParams<float>& p, const NetworkConfig& cfg);

// Probability output of the segmentation-only path (used by the sliding and
// full-volume inference drivers).
Tensor<float> forward_infer_prob(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                                 const ModelParams<float>& p, const NetworkConfig& cfg);

// Same path but stopping before the head's 2x upsample: probability on the
// network's input grid. Feeds the enlarge-outside-the-network baseline and
// native-resolution window models.
Tensor<float> forward_infer_prob_lr(const Tensor<float>& x_lr, const Tensor<float>& x_patch,
                                    const ModelParams<float>& p, const NetworkConfig& cfg);

// Per-stage spatial dims by pure arithmetic (no tensors allocated); lets the
// paper-scale configuration be checked without running conv kernels.
struct ShapeReport {
  std::vector<std::array<std::int64_t, 3>> encoder;  // post-block, pre-pool
  std::array<std::int64_t, 3> bottleneck;
  std::vector<std::array<std::int64_t, 3>> guidance;  // per stride-2 stage
  std::vector<std::array<std::int64_t, 3>> decoder;   // post-block per stage
  std::array<std::int64_t, 3> output;                 // head output dims
};
ShapeReport simulate_shapes(const NetworkConfig& cfg);

// "PFW1" checkpoint: u32 param count; per param u16 name length + bytes,
// u8 rank, u32 extents, f32 data. Little-endian throughout.
void save_checkpoint(const ModelParams<float>& p, const std::string& path);
std::vector<std::pair<std::string, Tensor<float>>> load_checkpoint(const std::string& path);
// Overwrites matching parameters; missing/extra/shape-mismatched names throw.
void apply_checkpoint(ModelParams<float>& p,
                      const std::vector<std::pair<std::string, Tensor<float>>>& loaded);

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

}  // namespace pfseg
