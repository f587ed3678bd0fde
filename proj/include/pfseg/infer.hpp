#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pfseg/metrics.hpp"
#include "pfseg/network.hpp"
#include "pfseg/trainer.hpp"
#include "pfseg/volume.hpp"

namespace pfseg {

struct MetricsReport {
  double dsc = 0.0;
  double jaccard = 0.0;
  double hd95 = 0.0;
  bool hd95_defined = false;
  double seconds = 0.0;
  std::int64_t forward_passes = 0;
  std::int64_t parameter_count = 0;
  std::int64_t peak_activation_elems = 0;
};

// Window origins in x-fastest order: k*stride per axis while the window
// fits, plus a clamped final origin so the union covers every voxel.
struct SlidingWindowPlan {
  std::array<std::int64_t, 3> patch{};
  std::array<std::int64_t, 3> stride{};
  std::vector<std::array<std::int64_t, 3>> origins;
};

SlidingWindowPlan make_sliding_plan(const std::array<std::int64_t, 3>& dims,
                                    const std::array<std::int64_t, 3>& patch,
                                    const std::array<std::int64_t, 3>& stride);

struct InferResult {
  Volume mask;  // binary, same dims as the input volume
  double seconds = 0.0;
  std::int64_t passes = 0;
};

// normalize -> downsample 2x -> variance-guided crop -> one network pass.
// Volume dims must match the model's full-resolution grid.
InferResult patch_free_infer(const Volume& image, const ModelParams<float>& p,
                             const NetworkConfig& cfg);

// Each window runs at native resolution through a model whose input grid is
// the window itself (probability taken before the head upsample); overlaps
// resolve by probability averaging in an f64 accumulator, threshold 0.5.
InferResult sliding_window_infer(const Volume& image, const SlidingWindowPlan& plan,
                                 const ModelParams<float>& p,
                                 const NetworkConfig& window_cfg);

// Segment at half resolution, enlarge the probability map 2x by tricubic
// interpolation, threshold 0.5.
InferResult lr_baseline_infer(const Volume& image, const ModelParams<float>& p,
                              const NetworkConfig& cfg);

// Overlap metrics for one prediction; timing/cost fields left to the caller.
MetricsReport evaluate_case(const Volume& pred, const Volume& gt);

// "case_id dsc jaccard hd95 seconds passes"; hd95 prints "-" when undefined.
std::string case_line(const std::string& case_id, const MetricsReport& r);

// Peak of the summed live-tensor elements along the single-pass segmentation
// schedule at block granularity (inputs, retained skips, guidance feature,
// block outputs, head maps). Grows 8x when every spatial extent doubles.
std::int64_t estimate_peak_activations(const NetworkConfig& cfg);

enum class InferMode { patch_free, sliding, lr_baseline };

struct BenchSpec {
  std::string name;
  InferMode mode = InferMode::patch_free;
  std::string checkpoint;  // unreadable/missing -> row skipped with a note
  NetworkConfig net = desk_config();
  // sliding only; any zero entry falls back to the window extents (no overlap)
  std::array<std::int64_t, 3> stride{0, 0, 0};
};

struct BenchRow {
  std::string name;
  bool skipped = false;
  std::string note;
  double dsc = 0.0, jaccard = 0.0, hd95 = 0.0;
  std::int64_t hd95_excluded = 0;
  double seconds = 0.0;  // mean over cases of the per-case medians
  std::int64_t passes = 0;
  std::int64_t parameter_count = 0;
  std::int64_t peak_activation_elems = 0;
};

// Per model and case: one warm-up run (kept for the metrics), then `repeats`
// timed runs whose median is the case's wall clock.
std::vector<BenchRow> run_benchmark(const std::vector<BenchSpec>& specs,
                                    const std::vector<TrainPair>& cases, int repeats = 5);

// Tab-separated table, one row per model; full-scale literature results are
// appended as clearly labeled non-reproduced reference lines.
std::string benchmark_table(const std::vector<BenchRow>& rows);

}  // namespace pfseg
