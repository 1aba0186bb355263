#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pairrl/scenario.hpp"
#include "pairrl/splits.hpp"
#include "pairrl/tensor.hpp"

namespace pairrl {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream index).
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

// Grid channel layout.
namespace channel {
inline constexpr std::size_t gripper = 0;
inline constexpr std::size_t occupancy = 1;
inline constexpr std::size_t category_begin = 2;
inline constexpr std::size_t category_end = 6;
inline constexpr std::size_t receptacle = 6;
inline constexpr std::size_t background_begin = 7;
inline constexpr std::size_t background_end = 10;
}  // namespace channel

inline constexpr std::size_t kCategoryEmbeddingDim = channel::category_end - channel::category_begin;
inline constexpr std::size_t kProprioDim = 3;
inline constexpr std::array<double, 4> kOrientations = {0.0, 0.7853981633974483, 1.5707963267948966,
                                                        3.141592653589793};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct GripperState {
  Vec2 pos;
  bool closed = false;
  // 0 is the target, 1..n the distractors.
  std::optional<int> grasped_id;
  friend bool operator==(const GripperState&, const GripperState&) = default;
};

struct ObjectState {
  Vec2 pos;
  double theta = 0.0;
  int category = 0;
  friend bool operator==(const ObjectState&, const ObjectState&) = default;
};

struct SceneState {
  GripperState gripper;
  ObjectState target;
  std::vector<ObjectState> distractors;
  Vec2 receptacle;
  int texture_id = 0;
  LightingConfig lighting = LightingConfig::identity();
  double camera_angle = 0.0;  // radians
  int step_count = 0;
  int grasp_streak = 0;
  bool grasp_reward_given = false;
  bool streak_reward_given = false;
  bool succeeded = false;

  std::size_t entity_count() const { return 1 + distractors.size(); }
  const ObjectState& entity(int id) const { return id == 0 ? target : distractors.at(std::size_t(id - 1)); }
  ObjectState& entity(int id) { return id == 0 ? target : distractors.at(std::size_t(id - 1)); }
  friend bool operator==(const SceneState&, const SceneState&) = default;
};

/// What the policy sees: a C x H x W feature grid, gripper proprioception
/// (x, y in workspace-normalised units, grip bit) and a one-hot instruction.
struct Observation {
  Tensor grid;
  std::array<float, kProprioDim> proprio{};
  std::vector<float> instruction;
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;
  std::uint8_t at(std::size_t r, std::size_t c) const { return cells[r * width + c]; }
  friend bool operator==(const Mask&, const Mask&) = default;
};

enum class ActionHead { continuous, discrete };

/// Normalised continuous command: the gripper moves by
/// clip(action_scale * (dx, dy), -max_delta, max_delta); grip closes when
/// grip_logit > 0.
struct ContinuousAction {
  float dx = 0.0f;
  float dy = 0.0f;
  float grip_logit = -1.0f;
};

enum class DiscreteAction : int { plus_x = 0, minus_x, plus_y, minus_y, grasp, release };
inline constexpr int kNumDiscreteActions = 6;

using Action = std::variant<ContinuousAction, DiscreteAction>;

struct EnvConfig {
  std::size_t grid_size = 16;
  int horizon = 80;
  double grasp_radius = 0.1;
  double place_radius = 0.15;
  int grasp_streak_threshold = 3;
  ActionHead head = ActionHead::continuous;
  double action_scale = 0.05;
  double max_delta = 0.1;
  double discrete_step = 0.1;

  // Geometry in table units (1 unit = 50 cm); the table is [-1, 1]^2.
  Vec2 workspace_center{-0.32, 0.0};
  double inner_half_edge = 0.15;
  double outer_half_edge = 0.21;
  int placement_grid = 6;
  Vec2 gripper_home{-0.32, 0.0};
  double reach_half_extent = 0.3;

  // The camera looks down at the workspace; the view spans +-view_half_extent
  // around workspace_center and rotates about it by the camera angle.
  double view_half_extent = 0.32;
  double blob_radius_cells = 1.5;
  // Largest camera angle (degrees) allowed for viewpoint re-rendering.
  double camera_max_deg = 20.0;

  SplitTables splits = build_splits(0);

  void validate() const;
};

struct StepInfo {
  bool target_grasped = false;
  bool success = false;
  std::optional<int> grasped_id;
};

struct StepResult {
  SceneState state;
  Observation obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Deterministic 2-D pick-and-place table. All methods are const and the
/// object holds no mutable state, so one instance can serve many episodes and
/// threads.
class Tabletop {
 public:
  explicit Tabletop(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  std::size_t grid_size() const { return config_.grid_size; }
  Shape grid_shape() const { return {kGridChannels, config_.grid_size, config_.grid_size}; }

  std::pair<SceneState, Observation> reset(const ScenarioSpec& scenario, Rng& rng) const;
  StepResult step(const SceneState& state, const Action& action) const;

  Observation render(const SceneState& state) const;
  Mask segmentation_mask(const SceneState& state) const;
  Tensor render_background(int texture_id, const LightingConfig& lighting, double camera_angle) const;

  /// Cells covered by a blob at world position `p` under `camera_angle`.
  std::vector<std::size_t> footprint(Vec2 p, double camera_angle) const;

  /// Placement points of the inner square (row-major, placement_grid^2).
  std::vector<Vec2> inner_grid_points() const;
  /// Points on the border of the enlarged square used for pose shifts.
  std::vector<Vec2> border_points() const;

  bool terminal(const SceneState& s) const { return s.succeeded || s.step_count >= config_.horizon; }

  const std::array<float, kCategoryEmbeddingDim>& category_embedding(int category) const;

 private:
  Vec2 clamp_to_reach(Vec2 p) const;
  void paint_background(Tensor& grid, int texture_id, const LightingConfig& lighting, double camera_angle) const;

  EnvConfig config_;
  std::vector<std::array<float, kCategoryEmbeddingDim>> embeddings_;
};

/// Maps a raw policy action (normalised continuous vector or categorical
/// index) to an environment action for `head`.
Action to_action(ActionHead head, std::span<const float> raw);

/// Stable hex digest of a scene state (FNV-1a over its fields).
std::string state_digest(const SceneState& s);

}  // namespace pairrl
