#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pfseg/trainer.hpp"
#include "pfseg/volume.hpp"

namespace pfseg {

// Ordered key=value pairs from a plain-text config ('#' comments and blank
// lines allowed, duplicates rejected).
struct KeyValues {
  std::vector<std::pair<std::string, std::string>> items;

  bool has(const std::string& key) const;
  const std::string* find(const std::string& key) const;
};

KeyValues parse_config_text(const std::string& text);
KeyValues load_config(const std::string& path);

// "48x48x32" -> {48,48,32}; every extent positive.
std::array<std::int64_t, 3> parse_dims(const std::string& s);
bool parse_onoff(const std::string& key, const std::string& s);
std::int64_t parse_int(const std::string& key, const std::string& s, std::int64_t lo);
double parse_real(const std::string& key, const std::string& s);

// Strict mapping onto the training configuration: unknown keys are rejected
// so a typo can never silently fall back to a default.
TrainConfig train_config_from(const KeyValues& kv);

// Fully resolved snapshot; feeding it back through train_config_from yields
// an identical configuration.
std::string train_config_text(const TrainConfig& cfg);

// Lesion phantom parameters for a generated case: the default intensity
// bands with semi-axes scaled to the volume so small grids stay generable.
PhantomSpec phantom_spec_for(const std::array<std::int64_t, 3>& dims,
                             std::uint64_t case_seed);

}  // namespace pfseg
