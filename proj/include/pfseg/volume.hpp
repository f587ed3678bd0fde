#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/common.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg {

enum class VolumeKind : std::uint8_t { image = 0, soft_mask = 1, binary_mask = 2 };

// Single- or multi-channel dense volume, x-fastest within a channel.
struct Volume {
  std::int64_t w = 0, h = 0, d = 0, c = 1;
  VolumeKind kind = VolumeKind::image;
  std::vector<float> data;

  std::int64_t voxels() const { return w * h * d; }
  std::int64_t size() const { return w * h * d * c; }

  float& at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t ch = 0) {
    return data[static_cast<std::size_t>(((ch * d + z) * h + y) * w + x)];
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t ch = 0) const {
    return data[static_cast<std::size_t>(((ch * d + z) * h + y) * w + x)];
  }

  static Volume zeros(std::int64_t w, std::int64_t h, std::int64_t d,
                      VolumeKind kind = VolumeKind::image, std::int64_t c = 1);
  // Throws when dims/data length/kind value-range invariants are broken.
  void validate() const;
};

// Min-corner + extents of a subvolume.
struct PatchSpec {
  std::int64_t x0 = 0, y0 = 0, z0 = 0;
  std::int64_t w = 0, h = 0, d = 0;

  bool inside(std::int64_t vw, std::int64_t vh, std::int64_t vd) const {
    return x0 >= 0 && y0 >= 0 && z0 >= 0 && w >= 1 && h >= 1 && d >= 1 &&
           x0 + w <= vw && y0 + h <= vh && z0 + d <= vd;
  }
};

// "PFV1" container: magic, LE u32 W,H,D,C, u8 kind, 3 reserved zero bytes,
// then W*H*D*C LE f32 values (x-fastest, channel-major).
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

// Plain-text manifest: one "image_path<TAB>mask_path" line per case.
std::vector<std::pair<std::string, std::string>> load_manifest(const std::string& path);
void save_manifest(const std::vector<std::pair<std::string, std::string>>& entries,
                   const std::string& path);

// Block-average down-sampling; binary masks decay to soft (block means).
Volume downsample(const Volume& v, int factor);
// Max-pool down-sampling for masks: keeps thin structures as positives.
Volume downsample_mask_max(const Volume& v, int factor);
// Catmull-Rom tricubic with the same half-voxel (align-corners=false) grid
// convention as upsample_trilinear; border taps clamped.
Volume upsample_tricubic(const Volume& v, int factor);
// 4-tap Catmull-Rom at fraction t in [0,1) between p[1] and p[2]; the scalar
// reference the tricubic path reduces to along each axis.
double catmull_rom_1d(const double p[4], double t);

// Per-volume z-score with std floored at 1e-6; image kind only.
Volume normalize(const Volume& v);

Volume crop(const Volume& v, const PatchSpec& s);
void paste(Volume& dst, const Volume& src, std::int64_t x0, std::int64_t y0,
           std::int64_t z0);

Tensor<float> to_tensor(const Volume& v);
Volume to_volume(const Tensor<float>& t, VolumeKind kind);

struct PhantomSpec {
  std::uint64_t seed = 0;
  std::int64_t w = 48, h = 48, d = 32;
  int lesions_min = 1, lesions_max = 3;
  double radius_min = 4.0, radius_max = 9.0;  // ellipsoid semi-axes, voxels
  double bg_lo = 0.25, bg_hi = 0.45;          // background intensity band
  double lesion_lo = 0.65, lesion_hi = 0.90;  // lesion intensity band
  double noise_std = 0.05;
  std::int64_t field_scale = 8;  // coarse-grid cell size of the background field
  double min_mask_fraction = 0.01, max_mask_fraction = 0.15;
};

// Deterministic per seed; retries lesion placement until the mask fraction
// lands in [min,max]. No libm in any data path, so outputs are platform-exact.
std::pair<Volume, Volume> generate_phantom(const PhantomSpec& spec);

}  // namespace pfseg
