#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pairrl/splits.hpp"

namespace pairrl {

enum class ScenarioKind { train, texture_ood, lighting_ood, pose_ood, clutter_ood, camera };
enum class PoseRegion { inner, border };

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& s);
std::string to_string(PoseRegion region);
PoseRegion parse_pose_region(const std::string& s);

/// What an episode is sampled from. Every pool is a list of ids into the
/// split tables.
struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::train;
  int n_distractors = 1;
  std::vector<int> texture_pool;
  // Target category and the non-held-out share of distractors.
  std::vector<int> category_pool;
  // Held-out share of distractors (half of them, rounded down); clutter only.
  std::vector<int> heldout_category_pool;
  std::vector<int> lighting_pool;
  PoseRegion pose_region = PoseRegion::inner;
  double camera_angle_deg = 0.0;
  // When non-empty, each episode draws its camera angle from this list.
  std::vector<int> camera_pool_deg;

  bool is_ood(const SplitTables& splits) const;
};

/// Builds the canonical scenario of `kind` from the split tables.
/// `n_distractors` applies to clutter; `camera_deg` to camera scenarios.
ScenarioSpec make_scenario(ScenarioKind kind, const SplitTables& splits, int n_distractors = 1,
                           double camera_deg = 0.0);

/// Throws ScenarioError unless train scenarios use only train pools and each
/// OOD scenario takes its shifted factor from an eval-only pool (and nothing
/// else from eval pools).
void check_split_discipline(const ScenarioSpec& spec, const SplitTables& splits);

nlohmann::json scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json(const nlohmann::json& j);

}  // namespace pairrl
