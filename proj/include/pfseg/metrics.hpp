#pragma once

#include <array>
#include <vector>

#include "pfseg/volume.hpp"

namespace pfseg {

// Set-overlap scores over single-channel binary masks of equal dims.
// Both-empty pairs score 1 by convention.
double dice_score(const Volume& a, const Volume& b);
double jaccard(const Volume& a, const Volume& b);

// 95th-percentile symmetric boundary distance in voxel units. Undefined (and
// flagged) when either mask is empty; callers exclude undefined results from
// aggregation and count them.
struct Hd95Result {
  double value = 0.0;
  bool defined = false;
};
Hd95Result hd95(const Volume& a, const Volume& b);

// Foreground voxels with at least one 6-connected background neighbor;
// voxels outside the grid count as background.
std::vector<std::array<int, 3>> boundary_voxels(const Volume& mask);

}  // namespace pfseg
