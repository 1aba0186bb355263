#include "pairrl/splits.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "pairrl/errors.hpp"

namespace pairrl {

bool LightingConfig::valid() const {
  for (std::size_t c = 0; c < kGridChannels; ++c) {
    if (!(gain[c] >= 0.3f && gain[c] <= 2.0f)) return false;
    if (!(bias[c] >= -0.3f && bias[c] <= 0.3f)) return false;
  }
  return true;
}

const LightingConfig& SplitTables::lighting_config(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= lighting.size()) {
    throw ConfigError("unknown lighting id " + std::to_string(id));
  }
  return lighting[static_cast<std::size_t>(id)];
}

SplitTables build_splits(std::uint64_t seed) {
  SplitTables s;
  s.seed = seed;
  for (int i = 0; i < 16; ++i) s.texture_train.push_back(i);
  for (int i = 16; i < kNumTextures; ++i) s.texture_eval.push_back(i);
  for (int i = 0; i < 16; ++i) s.category_train.push_back(i);
  for (int i = 16; i < kNumCategories; ++i) s.category_eval.push_back(i);

  // One fixed training rig, then held-out rigs: a global brightness change with
  // small per-channel colour casts.
  s.lighting.push_back(LightingConfig::identity());
  s.lighting_train.push_back(0);
  std::mt19937_64 rng(seed ^ 0x6c69676874ULL);
  std::uniform_real_distribution<float> brightness(0.55f, 1.6f);
  std::uniform_real_distribution<float> cast(0.9f, 1.1f);
  std::uniform_real_distribution<float> offset(-0.15f, 0.15f);
  std::uniform_real_distribution<float> jitter(-0.05f, 0.05f);
  for (int k = 1; k <= kNumEvalLightings; ++k) {
    LightingConfig l;
    const float g = brightness(rng);
    const float b = offset(rng);
    for (std::size_t c = 0; c < kGridChannels; ++c) {
      l.gain[c] = std::clamp(g * cast(rng), 0.3f, 2.0f);
      l.bias[c] = std::clamp(b + jitter(rng), -0.3f, 0.3f);
    }
    s.lighting.push_back(l);
    s.lighting_eval.push_back(k);
  }

  for (int a = 0; a <= 20; a += 4) s.camera_train_deg.push_back(a);
  s.camera_eval_deg = {24, 28};
  return s;
}

}  // namespace pairrl
