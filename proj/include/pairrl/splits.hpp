#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pairrl {

inline constexpr std::size_t kGridChannels = 10;
inline constexpr int kNumCategories = 25;
inline constexpr int kNumTextures = 21;
inline constexpr int kNumEvalLightings = 20;

/// Per-channel multiplicative gain and additive bias applied to rendered
/// visual channels.
struct LightingConfig {
  std::array<float, kGridChannels> gain{};
  std::array<float, kGridChannels> bias{};

  static LightingConfig identity() {
    LightingConfig l;
    l.gain.fill(1.0f);
    l.bias.fill(0.0f);
    return l;
  }

  bool valid() const;
  friend bool operator==(const LightingConfig&, const LightingConfig&) = default;
};

/// Train/eval partition of every visual factor. Lighting ids index `lighting`:
/// id 0 is the training rig, ids 1..20 are held out.
struct SplitTables {
  std::uint64_t seed = 0;
  std::vector<int> texture_train;
  std::vector<int> texture_eval;
  std::vector<int> category_train;
  std::vector<int> category_eval;
  std::vector<int> lighting_train;
  std::vector<int> lighting_eval;
  std::vector<LightingConfig> lighting;
  std::vector<int> camera_train_deg;
  std::vector<int> camera_eval_deg;

  const LightingConfig& lighting_config(int id) const;
};

SplitTables build_splits(std::uint64_t seed);

}  // namespace pairrl
