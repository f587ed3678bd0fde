#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/common.hpp"
#include "pfseg/volume.hpp"

namespace pfseg {

// Variance-guided spherical scan for the guidance patch. The scan walks
// shells r = L*r_step, 2L*r_step, ... L (L = half-diagonal), polar angle in
// [0, pi] and azimuth in [0, 2*pi], keeping the highest-variance patch.
struct CropSearchConfig {
  std::int64_t patch_w = 0, patch_h = 0, patch_d = 0;
  double r_step = 1.0 / 6.0;  // shell spacing as a fraction of L
  double theta_step = std::numbers::pi / 6.0;
  double phi_step = std::numbers::pi / 3.0;
  int patience = 10;        // consecutive non-improvements before giving up
  bool scan_strict = false; // true: first out-of-bounds candidate ends the scan
};

enum class CropExit { boundary, patience, exhausted };

struct CropCandidate {
  std::int64_t x = 0, y = 0, z = 0;  // patch center, voxel indices
  double variance = 0.0;
};

struct CropSearchTrace {
  std::vector<CropCandidate> visited;  // evaluation order; central patch first
  PatchSpec best;
  double best_variance = 0.0;
  CropExit exit_reason = CropExit::exhausted;
};

// Population variance of the patch intensities, two-pass f64.
double patch_variance(const Volume& v, const PatchSpec& s);

// (r, theta, phi) -> nearest voxel center per
//   x = r*sin(theta)*cos(phi) + W/2
//   y = r*sin(theta)*sin(phi) + H/2
//   z = r*cos(theta)         + D/2
std::array<std::int64_t, 3> spherical_to_center(double r, double theta, double phi,
                                                std::int64_t w, std::int64_t h,
                                                std::int64_t d);

std::pair<PatchSpec, CropSearchTrace> selective_crop(const Volume& v,
                                                     const CropSearchConfig& cfg);

PatchSpec central_crop(const Volume& v, std::int64_t w, std::int64_t h, std::int64_t d);
PatchSpec random_crop(const Volume& v, std::int64_t w, std::int64_t h, std::int64_t d,
                      Rng& rng);

// One "x<TAB>y<TAB>z<TAB>variance" line per visited candidate.
std::string trace_tsv(const CropSearchTrace& trace);

}  // namespace pfseg
