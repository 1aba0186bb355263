#pragma once

#include <cstddef>
#include <vector>

#include "pairrl/tabletop.hpp"

namespace pairrl {

/// Object-free background renders used as compositing sources.
struct SnapshotBank {
  struct Snapshot {
    Tensor grid;
    int texture_id = 0;
    int lighting_id = 0;
  };
  std::vector<Snapshot> snapshots;

  std::size_t size() const { return snapshots.size(); }
};

/// Target-pose perturbation used for task-altering views.
struct PoseNoise {
  double translation_std = 0.06;
  std::vector<double> rotation_choices{kOrientations.begin(), kOrientations.end()};
};

struct PairedViews {
  Observation preserving;
  Observation altering;
  // Provenance: snapshot used (composite mode) or camera offset in degrees
  // (viewpoint mode), plus the pose delta applied to the target.
  std::size_t snapshot_index = 0;
  double angle_offset_deg = 0.0;
  Vec2 pose_delta;
  double rotation = 0.0;
};

/// K snapshots over the training textures under the training lighting rig.
/// Textures are drawn by cycling through shuffled passes over the pool, so
/// K == pool size uses every texture exactly once.
SnapshotBank build_snapshot_bank(const Tabletop& env, std::size_t k, const std::vector<int>& texture_pool, Rng& rng);

/// m * grid + (1 - m) * background, with the mask broadcast over channels.
Tensor composite(const Tensor& grid, const Mask& mask, const Tensor& background);

/// Composites `obs` over a uniformly drawn snapshot. Proprio and instruction
/// are copied. `snapshot_used`, when given, receives the drawn index.
Observation make_preserving_view(const Observation& obs, const Mask& mask, const SnapshotBank& bank, Rng& rng,
                                 std::size_t* snapshot_used = nullptr);

/// Re-renders `state` with the camera rotated by `angle_offset_deg`. The
/// resulting angle must lie in [0, camera_max_deg].
Observation make_preserving_view_viewpoint(const SceneState& state, double angle_offset_deg, const Tabletop& env);

/// Re-renders `state` with the target translated by N(0, std^2 I) (clipped to
/// the table) and re-oriented uniformly. A grasped target moves together with
/// the gripper.
Observation make_altering_view(const SceneState& state, const PoseNoise& noise, const Tabletop& env, Rng& rng,
                               Vec2* delta_out = nullptr, double* rotation_out = nullptr);

}  // namespace pairrl
