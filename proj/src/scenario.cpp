#include "pairrl/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "pairrl/errors.hpp"

namespace pairrl {

namespace {

bool subset(const std::vector<int>& pool, const std::vector<int>& of) {
  return std::all_of(pool.begin(), pool.end(),
                     [&](int v) { return std::find(of.begin(), of.end(), v) != of.end(); });
}

bool contains(const std::vector<int>& set, double v) {
  return std::any_of(set.begin(), set.end(), [&](int x) { return std::abs(x - v) < 1e-9; });
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::train: return "train";
    case ScenarioKind::texture_ood: return "texture_ood";
    case ScenarioKind::lighting_ood: return "lighting_ood";
    case ScenarioKind::pose_ood: return "pose_ood";
    case ScenarioKind::clutter_ood: return "clutter_ood";
    case ScenarioKind::camera: return "camera";
  }
  return "?";
}

ScenarioKind parse_scenario_kind(const std::string& s) {
  for (auto k : {ScenarioKind::train, ScenarioKind::texture_ood, ScenarioKind::lighting_ood, ScenarioKind::pose_ood,
                 ScenarioKind::clutter_ood, ScenarioKind::camera}) {
    if (to_string(k) == s) return k;
  }
  throw ScenarioError("unknown scenario kind '" + s + "'");
}

std::string to_string(PoseRegion region) { return region == PoseRegion::inner ? "inner" : "border"; }

PoseRegion parse_pose_region(const std::string& s) {
  if (s == "inner") return PoseRegion::inner;
  if (s == "border") return PoseRegion::border;
  throw ScenarioError("unknown pose region '" + s + "'");
}

bool ScenarioSpec::is_ood(const SplitTables& splits) const {
  if (kind == ScenarioKind::camera) return contains(splits.camera_eval_deg, camera_angle_deg);
  return kind != ScenarioKind::train;
}

ScenarioSpec make_scenario(ScenarioKind kind, const SplitTables& splits, int n_distractors, double camera_deg) {
  ScenarioSpec s;
  s.kind = kind;
  s.n_distractors = 1;
  s.texture_pool = splits.texture_train;
  s.category_pool = splits.category_train;
  s.lighting_pool = splits.lighting_train;
  switch (kind) {
    case ScenarioKind::train: break;
    case ScenarioKind::texture_ood: s.texture_pool = splits.texture_eval; break;
    case ScenarioKind::lighting_ood: s.lighting_pool = splits.lighting_eval; break;
    case ScenarioKind::pose_ood: s.pose_region = PoseRegion::border; break;
    case ScenarioKind::clutter_ood:
      if (n_distractors < 2) throw ScenarioError("clutter scenarios need at least 2 distractors");
      s.n_distractors = n_distractors;
      s.heldout_category_pool = splits.category_eval;
      break;
    case ScenarioKind::camera: s.camera_angle_deg = camera_deg; break;
  }
  return s;
}

void check_split_discipline(const ScenarioSpec& s, const SplitTables& splits) {
  const bool tex_eval = s.kind == ScenarioKind::texture_ood;
  const bool light_eval = s.kind == ScenarioKind::lighting_ood;
  const bool pose_eval = s.kind == ScenarioKind::pose_ood;
  const bool clutter = s.kind == ScenarioKind::clutter_ood;

  auto fail = [&](const std::string& what) {
    throw ScenarioError(to_string(s.kind) + " scenario violates split discipline: " + what);
  };
  if (s.texture_pool.empty() || s.category_pool.empty() || s.lighting_pool.empty()) fail("empty pool");
  if (!subset(s.texture_pool, tex_eval ? splits.texture_eval : splits.texture_train)) fail("texture pool");
  if (!subset(s.lighting_pool, light_eval ? splits.lighting_eval : splits.lighting_train)) fail("lighting pool");
  if (!subset(s.category_pool, splits.category_train)) fail("category pool");
  if (clutter) {
    if (s.heldout_category_pool.empty() || !subset(s.heldout_category_pool, splits.category_eval))
      fail("held-out category pool");
    if (s.n_distractors < 2) fail("clutter needs >= 2 distractors");
  } else if (!s.heldout_category_pool.empty()) {
    fail("held-out categories outside clutter");
  }
  if ((s.pose_region == PoseRegion::border) != pose_eval) fail("pose region");
  if (s.kind == ScenarioKind::camera) {
    if (!contains(splits.camera_train_deg, s.camera_angle_deg) && !contains(splits.camera_eval_deg, s.camera_angle_deg))
      fail("camera angle");
  } else {
    if (!contains(splits.camera_train_deg, s.camera_angle_deg)) fail("camera angle");
  }
  for (int a : s.camera_pool_deg) {
    if (!contains(splits.camera_train_deg, a)) fail("camera pool");
  }
}

nlohmann::json scenario_to_json(const ScenarioSpec& s) {
  return nlohmann::json{{"scenario_kind", to_string(s.kind)},
                        {"n_distractors", s.n_distractors},
                        {"texture_pool", s.texture_pool},
                        {"category_pool", s.category_pool},
                        {"heldout_category_pool", s.heldout_category_pool},
                        {"lighting_pool", s.lighting_pool},
                        {"pose_region", to_string(s.pose_region)},
                        {"camera_angle_deg", s.camera_angle_deg},
                        {"camera_pool_deg", s.camera_pool_deg}};
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  try {
    ScenarioSpec s;
    s.kind = parse_scenario_kind(j.at("scenario_kind").get<std::string>());
    s.n_distractors = j.at("n_distractors").get<int>();
    s.texture_pool = j.at("texture_pool").get<std::vector<int>>();
    s.category_pool = j.at("category_pool").get<std::vector<int>>();
    s.heldout_category_pool = j.value("heldout_category_pool", std::vector<int>{});
    s.lighting_pool = j.at("lighting_pool").get<std::vector<int>>();
    s.pose_region = parse_pose_region(j.at("pose_region").get<std::string>());
    s.camera_angle_deg = j.at("camera_angle_deg").get<double>();
    s.camera_pool_deg = j.value("camera_pool_deg", std::vector<int>{});
    if (s.n_distractors < 0) throw ScenarioError("negative distractor count");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError(std::string("malformed scenario json: ") + e.what());
  }
}

}  // namespace pairrl
