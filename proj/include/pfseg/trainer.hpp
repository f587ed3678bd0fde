#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/crop_search.hpp"
#include "pfseg/losses.hpp"
#include "pfseg/network.hpp"
#include "pfseg/volume.hpp"

namespace pfseg {

enum class CropStrategy { random, central, selective };

struct TrainingSample {
  Volume x_lr;     // half-resolution network input
  Volume x_patch;  // HR guidance crop, 1/4 extent per axis
  Volume x_hr;     // normalized HR image, restoration target
  Volume gt_mask;  // HR binary mask
};

struct TrainConfig {
  bool use_srt = true;    // restoration loss term
  bool use_tel = true;    // fusion target-enhancement term
  bool use_ssl = true;    // fusion structure-similarity term
  bool use_hgm = true;    // guidance branch wired into the bottleneck
  bool use_msres = true;  // multi-scale encoder blocks (else plain residual)
  bool tel_target_only = false;
  CropStrategy crop = CropStrategy::selective;
  int max_epochs = 150;
  double lr_init = 1e-4;
  int plateau_patience = 10;
  double lr_divisor = 10.0;
  double lr_floor = 1e-7;
  int batch_size = 1;  // fixed; validated
  std::uint64_t seed = 0;
  bool augment_flip = true;
  bool augment_rotate = true;
  bool augment_shift = true;
  NetworkConfig net = desk_config();

  // net with the hgm/msres ablation flags applied
  NetworkConfig effective_net() const;
  void validate() const;
};

// normalize -> downsample 2x -> guidance crop on the HR image.
// Image dims must be divisible by 4; central/selective crops are
// deterministic, random consumes the rng.
TrainingSample make_sample(const Volume& image, const Volume& mask, CropStrategy strategy,
                           Rng& rng);

// Applies one draw of flip / in-plane 90-degree rotation / integer shift
// (zero fill) to the HR image and mask together, then re-derives x_lr and
// re-crops the guidance patch on the transformed image.
TrainingSample augment(const TrainingSample& s, const TrainConfig& cfg, Rng& rng);

// Axis-aligned helpers used by augmentation (exposed for tests).
Volume flip_volume(const Volume& v, int axis);
Volume rotate90_xy(const Volume& v, int quarter_turns);
Volume shift_volume(const Volume& v, int sx, int sy, int sz);

// Drops the rate by 1/divisor after `patience` consecutive epochs without a
// strict decrease of the observed loss; signals stop once lr < floor.
struct PlateauScheduler {
  double lr;
  double divisor;
  double floor;
  int patience;
  double best;
  int stalled = 0;

  PlateauScheduler(double lr0, int patience_, double divisor_, double floor_);
  bool observe(double epoch_loss);  // true when the rate dropped
  bool should_stop() const { return lr < floor; }
};

struct EpochStats {
  int epoch = 0;
  double loss = 0, l_ust = 0, l_srt = 0, l_tel = 0, l_ssl = 0;
  double lr = 0;
  double seconds = 0;
};

struct TrainPair {
  Volume image;
  Volume mask;
};

// Loads every manifest pair; relative paths resolve against the manifest dir.
std::vector<TrainPair> load_dataset(const std::string& manifest_path);

struct TrainResult {
  ModelParams<float> best;  // parameters at the lowest epoch-mean loss
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_loss = 0.0;
};

TrainResult train(const std::vector<TrainPair>& data, const TrainConfig& cfg);

// Header + one tab-separated row per epoch:
// epoch loss l_ust l_srt l_tel l_ssl lr seconds
std::string metrics_log(const std::vector<EpochStats>& history);
void write_metrics_log(const std::vector<EpochStats>& history, const std::string& path);

}  // namespace pfseg
