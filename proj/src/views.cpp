#include "pairrl/views.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pairrl/errors.hpp"

namespace pairrl {

SnapshotBank build_snapshot_bank(const Tabletop& env, std::size_t k, const std::vector<int>& texture_pool, Rng& rng) {
  if (k == 0) throw ConfigError("snapshot bank needs K >= 1");
  if (texture_pool.empty()) throw ConfigError("snapshot bank needs a non-empty texture pool");
  const auto& splits = env.config().splits;
  for (int t : texture_pool) {
    if (std::find(splits.texture_train.begin(), splits.texture_train.end(), t) == splits.texture_train.end()) {
      throw ConfigError("snapshot bank may only use training textures (got " + std::to_string(t) + ")");
    }
  }
  const int lighting_id = splits.lighting_train.front();
  const auto& lighting = splits.lighting_config(lighting_id);

  SnapshotBank bank;
  std::vector<int> order = texture_pool;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i % order.size();
    if (j == 0) {
      for (std::size_t a = 0; a + 1 < order.size(); ++a) {
        std::uniform_int_distribution<std::size_t> d(a, order.size() - 1);
        std::swap(order[a], order[d(rng)]);
      }
    }
    bank.snapshots.push_back({env.render_background(order[j], lighting, 0.0), order[j], lighting_id});
  }
  return bank;
}

Tensor composite(const Tensor& grid, const Mask& mask, const Tensor& background) {
  if (grid.rank() != 3 || grid.shape() != background.shape()) {
    throw DimensionError("composite needs equal C x H x W grids, got " + shape_str(grid.shape()) + " and " +
                         shape_str(background.shape()));
  }
  const std::size_t h = grid.shape()[1], w = grid.shape()[2];
  if (mask.height != h || mask.width != w || mask.cells.size() != h * w) {
    throw DimensionError("mask shape does not match grid");
  }
  Tensor out(grid.shape());
  const std::size_t plane = h * w;
  for (std::size_t c = 0; c < grid.shape()[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = c * plane + i;
      out[k] = mask.cells[i] ? grid[k] : background[k];
    }
  return out;
}

Observation make_preserving_view(const Observation& obs, const Mask& mask, const SnapshotBank& bank, Rng& rng,
                                 std::size_t* snapshot_used) {
  if (bank.snapshots.empty()) throw ConfigError("empty snapshot bank");
  std::uniform_int_distribution<std::size_t> d(0, bank.snapshots.size() - 1);
  const std::size_t k = d(rng);
  if (snapshot_used) *snapshot_used = k;
  Observation out;
  out.grid = composite(obs.grid, mask, bank.snapshots[k].grid);
  out.proprio = obs.proprio;
  out.instruction = obs.instruction;
  return out;
}

Observation make_preserving_view_viewpoint(const SceneState& state, double angle_offset_deg, const Tabletop& env) {
  const double current_deg = state.camera_angle * 180.0 / std::numbers::pi;
  const double next_deg = current_deg + angle_offset_deg;
  constexpr double slack = 1e-9;
  if (next_deg < -slack || next_deg > env.config().camera_max_deg + slack) {
    throw ContractError("viewpoint offset leaves the training camera range");
  }
  if (angle_offset_deg == 0.0) return env.render(state);
  SceneState moved = state;
  moved.camera_angle = next_deg * std::numbers::pi / 180.0;
  return env.render(moved);
}

Observation make_altering_view(const SceneState& state, const PoseNoise& noise, const Tabletop& env, Rng& rng,
                               Vec2* delta_out, double* rotation_out) {
  if (!(noise.translation_std >= 0.0)) throw ConfigError("translation std must be non-negative");
  if (noise.rotation_choices.empty()) throw ConfigError("rotation choices must be non-empty");
  std::normal_distribution<double> n(0.0, 1.0);
  const double dx = noise.translation_std * n(rng);
  const double dy = noise.translation_std * n(rng);
  std::uniform_int_distribution<std::size_t> r(0, noise.rotation_choices.size() - 1);
  const double theta = noise.rotation_choices[r(rng)];

  SceneState alt = state;
  const Vec2 moved{std::clamp(state.target.pos.x + dx, -1.0, 1.0), std::clamp(state.target.pos.y + dy, -1.0, 1.0)};
  alt.target.pos = moved;
  alt.target.theta = theta;
  if (alt.gripper.grasped_id && *alt.gripper.grasped_id == 0) alt.gripper.pos = moved;
  if (delta_out) *delta_out = {moved.x - state.target.pos.x, moved.y - state.target.pos.y};
  if (rotation_out) *rotation_out = theta;
  return env.render(alt);
}

}  // namespace pairrl
