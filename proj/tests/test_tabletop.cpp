#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "pairrl/errors.hpp"
#include "pairrl/scenario.hpp"
#include "pairrl/tabletop.hpp"

using namespace pairrl;

namespace {

const Tabletop& env() {
  static const Tabletop e{EnvConfig{}};
  return e;
}

const SplitTables& splits() { return env().config().splits; }

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool on_grid(Vec2 p, const std::vector<Vec2>& pts) {
  return std::any_of(pts.begin(), pts.end(), [&](Vec2 q) { return q == p; });
}

bool inside_inner(Vec2 p) {
  const auto& c = env().config();
  const double h = c.inner_half_edge + 1e-12;
  return std::abs(p.x - c.workspace_center.x) <= h && std::abs(p.y - c.workspace_center.y) <= h;
}

// Hand-built scene: gripper at `g`, target at `t`, receptacle at `r`, no distractors.
SceneState scene(Vec2 g, Vec2 t, Vec2 r) {
  SceneState s;
  s.gripper.pos = g;
  s.target.pos = t;
  s.target.category = 3;
  s.receptacle = r;
  return s;
}

std::size_t plane() { return env().grid_size() * env().grid_size(); }

}  // namespace

TEST_CASE("reset: training scenario places three entities on distinct inner grid cells") {
  const auto sc = make_scenario(ScenarioKind::train, splits(), 1);
  const auto grid = env().inner_grid_points();
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng = make_rng(11, i);
    auto [s, obs] = env().reset(sc, rng);
    REQUIRE(s.distractors.size() == 1);
    std::set<std::pair<double, double>> cells;
    for (Vec2 p : {s.target.pos, s.distractors[0].pos, s.receptacle}) {
      CHECK(on_grid(p, grid));
      CHECK(inside_inner(p));
      cells.insert({p.x, p.y});
    }
    CHECK(cells.size() == 3);
    CHECK(s.gripper.pos == env().config().gripper_home);
    CHECK_FALSE(s.gripper.closed);
    CHECK(s.distractors[0].category != s.target.category);
    // Instruction is the target category, one-hot.
    REQUIRE(obs.instruction.size() == static_cast<std::size_t>(kNumCategories));
    CHECK(std::count(obs.instruction.begin(), obs.instruction.end(), 1.0f) == 1);
    CHECK(std::count(obs.instruction.begin(), obs.instruction.end(), 0.0f) == kNumCategories - 1);
    CHECK(obs.instruction[static_cast<std::size_t>(s.target.category)] == 1.0f);
    CHECK(obs.grid.all_finite());
  }
}

TEST_CASE("reset: pose-OOD target lies on the border ring outside the inner square") {
  const auto sc = make_scenario(ScenarioKind::pose_ood, splits());
  const auto ring = env().border_points();
  const auto grid = env().inner_grid_points();
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng = make_rng(12, i);
    auto [s, obs] = env().reset(sc, rng);
    CHECK(on_grid(s.target.pos, ring));
    CHECK_FALSE(inside_inner(s.target.pos));
    CHECK(on_grid(s.receptacle, grid));
  }
}

TEST_CASE("reset: clutter N=8 draws exactly four distractor categories from the eval split") {
  const auto sc = make_scenario(ScenarioKind::clutter_ood, splits(), 8);
  const std::set<int> eval(splits().category_eval.begin(), splits().category_eval.end());
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = make_rng(13, i);
    auto [s, obs] = env().reset(sc, rng);
    REQUIRE(s.distractors.size() == 8);
    int held = 0;
    std::set<int> cats;
    for (const auto& d : s.distractors) {
      held += eval.count(d.category) ? 1 : 0;
      cats.insert(d.category);
    }
    CHECK(held == 4);
    CHECK(cats.size() == 8);
    CHECK_FALSE(eval.count(s.target.category));
  }
}

TEST_CASE("reset: more entities than grid cells is a scenario error") {
  auto sc = make_scenario(ScenarioKind::train, splits(), 1);
  sc.n_distractors = 40;
  Rng rng = make_rng(1, 0);
  CHECK_THROWS_AS(env().reset(sc, rng), ScenarioError);
  sc.n_distractors = -1;
  CHECK_THROWS_AS(env().reset(sc, rng), ScenarioError);
  sc = make_scenario(ScenarioKind::train, splits(), 1);
  sc.texture_pool = {99};
  CHECK_THROWS_AS(env().reset(sc, rng), ScenarioError);
}

TEST_CASE("step: grip next to the target grasps it with reward 0.1") {
  const Vec2 t{-0.32, 0.0};
  auto s = scene({t.x + 0.02, t.y}, t, {-0.2, 0.1});
  const auto r = env().step(s, ContinuousAction{0.0f, 0.0f, 1.0f});
  REQUIRE(r.state.gripper.grasped_id.has_value());
  CHECK(*r.state.gripper.grasped_id == 0);
  CHECK(r.reward == doctest::Approx(0.1));
  CHECK(r.info.target_grasped);
  CHECK_FALSE(r.done);
  CHECK(r.state.target.pos == r.state.gripper.pos);
}

TEST_CASE("step: releasing the target within place radius gives +1 and ends the episode") {
  const Vec2 rc{-0.3, 0.05};
  auto s = scene({rc.x + 0.03, rc.y}, {rc.x + 0.03, rc.y}, rc);
  s.gripper.closed = true;
  s.gripper.grasped_id = 0;
  s.grasp_reward_given = true;
  s.streak_reward_given = true;
  const auto r = env().step(s, ContinuousAction{0.0f, 0.0f, -1.0f});
  CHECK(r.reward == doctest::Approx(1.0));
  CHECK(r.done);
  CHECK(r.state.succeeded);
  CHECK(r.info.success);
  CHECK(dist(r.state.target.pos, r.state.receptacle) <= env().config().place_radius);
  CHECK_THROWS_AS(env().step(r.state, ContinuousAction{}), ContractError);
}

TEST_CASE("step: releasing far from the receptacle gives nothing") {
  const Vec2 rc{-0.45, -0.12};
  auto s = scene({-0.2, 0.12}, {-0.2, 0.12}, rc);
  s.gripper.closed = true;
  s.gripper.grasped_id = 0;
  s.grasp_reward_given = true;
  s.streak_reward_given = true;
  const auto r = env().step(s, ContinuousAction{0.0f, 0.0f, -1.0f});
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.done);
  CHECK_FALSE(r.state.gripper.grasped_id.has_value());
}

TEST_CASE("step: no-op in open space gives reward 0 and advances the step count") {
  auto s = scene({-0.32, 0.0}, {-0.2, 0.12}, {-0.45, -0.12});
  const auto r = env().step(s, ContinuousAction{0.0f, 0.0f, -1.0f});
  CHECK(r.reward == 0.0);
  CHECK(r.state.step_count == 1);
  CHECK(r.state.gripper.pos == s.gripper.pos);
  CHECK_FALSE(r.done);
}

TEST_CASE("step: deltas are clipped and the episode ends at the horizon") {
  auto s = scene({-0.32, 0.0}, {-0.2, 0.12}, {-0.45, -0.12});
  const auto r = env().step(s, ContinuousAction{100.0f, -100.0f, -1.0f});
  CHECK(r.state.gripper.pos.x == doctest::Approx(-0.32 + env().config().max_delta));
  CHECK(r.state.gripper.pos.y == doctest::Approx(-env().config().max_delta));
  s.step_count = env().config().horizon - 1;
  CHECK(env().step(s, ContinuousAction{}).done);
  CHECK_THROWS_AS(env().step(s, ContinuousAction{std::nanf(""), 0.0f, 0.0f}), ContractError);
  CHECK_THROWS_AS(env().step(s, DiscreteAction::grasp), ContractError);
}

TEST_CASE("step: nearest entity wins; exact ties go to the lowest id") {
  auto s = scene({-0.32, 0.0}, {-0.32 + 0.05, 0.0}, {-0.45, -0.12});
  ObjectState d;
  d.pos = {-0.32 + 0.02, 0.0};
  d.category = 5;
  s.distractors.push_back(d);
  auto r = env().step(s, ContinuousAction{0.0f, 0.0f, 1.0f});
  REQUIRE(r.state.gripper.grasped_id.has_value());
  CHECK(*r.state.gripper.grasped_id == 1);
  // Grabbing a distractor gives no bonus.
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.info.target_grasped);

  s.distractors[0].pos = {-0.32 - 0.05, 0.0};
  r = env().step(s, ContinuousAction{0.0f, 0.0f, 1.0f});
  CHECK(*r.state.gripper.grasped_id == 0);
}

TEST_CASE("step: a held distractor blocks success until released") {
  const Vec2 rc{-0.3, 0.05};
  auto s = scene(rc, {rc.x + 0.01, rc.y}, rc);
  ObjectState d;
  d.pos = rc;
  d.category = 5;
  s.distractors.push_back(d);
  s.gripper.closed = true;
  s.gripper.grasped_id = 1;
  auto r = env().step(s, ContinuousAction{0.0f, 0.0f, 1.0f});
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.done);
  r = env().step(r.state, ContinuousAction{0.0f, 0.0f, -1.0f});
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.state.succeeded);
}

TEST_CASE("step: streak bonus fires once after K consecutive target holds") {
  const Vec2 t{-0.32, 0.0};
  auto s = scene(t, t, {-0.45, -0.12});
  double total = 0.0;
  std::vector<double> rewards;
  for (int i = 0; i < 6; ++i) {
    auto r = env().step(s, ContinuousAction{0.0f, 0.0f, 1.0f});
    rewards.push_back(r.reward);
    total += r.reward;
    s = r.state;
  }
  const int k = env().config().grasp_streak_threshold;
  CHECK(rewards[0] == doctest::Approx(0.1));
  CHECK(rewards[static_cast<std::size_t>(k - 1)] == doctest::Approx(0.1));
  CHECK(total == doctest::Approx(0.2));
}

TEST_CASE("property: episode return is 0 or in [0.1, 1.2]; success implies placement; replay is exact") {
  const auto sc = make_scenario(ScenarioKind::train, splits(), 1);
  std::uniform_real_distribution<float> u(-2.5f, 2.5f);
  int successes = 0;
  for (std::uint64_t ep = 0; ep < 300; ++ep) {
    Rng rng = make_rng(21, ep);
    auto [s, obs] = env().reset(sc, rng);
    const SceneState start = s;
    std::vector<ContinuousAction> log;
    std::vector<double> rewards;
    double ret = 0.0;
    // Biased random walk towards the target then the receptacle so some episodes succeed.
    while (!env().terminal(s)) {
      const bool holding = s.gripper.grasped_id && *s.gripper.grasped_id == 0;
      const Vec2 goal = holding ? s.receptacle : s.target.pos;
      ContinuousAction a{static_cast<float>((goal.x - s.gripper.pos.x) * 20.0) + u(rng),
                         static_cast<float>((goal.y - s.gripper.pos.y) * 20.0) + u(rng), u(rng)};
      log.push_back(a);
      auto r = env().step(s, a);
      rewards.push_back(r.reward);
      ret += r.reward;
      if (r.info.success) {
        ++successes;
        CHECK(dist(r.state.target.pos, r.state.receptacle) <= env().config().place_radius);
      }
      s = r.state;
    }
    CHECK((ret == 0.0 || (ret >= 0.1 - 1e-12 && ret <= 1.2 + 1e-12)));
    SceneState replay = start;
    for (std::size_t i = 0; i < log.size(); ++i) {
      auto r = env().step(replay, log[i]);
      CHECK(r.reward == rewards[i]);
      replay = r.state;
    }
    CHECK(replay == s);
    CHECK(state_digest(replay) == state_digest(s));
  }
  CHECK(successes > 0);
}

TEST_CASE("render: deterministic, and identity lighting equals an unlit render") {
  const auto sc = make_scenario(ScenarioKind::train, splits(), 1);
  Rng rng = make_rng(3, 0);
  auto [s, obs] = env().reset(sc, rng);
  CHECK(env().render(s) == env().render(s));
  CHECK(env().render(s) == obs);
  s.lighting = LightingConfig::identity();
  const auto lit = env().render(s);
  // Non-identity lighting changes the grid but never proprio or instruction.
  auto s2 = s;
  s2.lighting = splits().lighting_config(splits().lighting_eval[0]);
  const auto shifted = env().render(s2);
  CHECK_FALSE(shifted.grid == lit.grid);
  CHECK(shifted.proprio == lit.proprio);
  CHECK(shifted.instruction == lit.instruction);
}

TEST_CASE("render: quarter-turn camera rotates footprints by a quarter turn") {
  const std::size_t n = env().grid_size();
  const Vec2 c = env().config().workspace_center;
  // Centered entity: identical under rotation.
  auto a = env().footprint(c, 0.0);
  auto b = env().footprint(c, std::numbers::pi / 2);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  CHECK_FALSE(a.empty());
  // Off-center entity: cell (r, col) at angle 0 maps to (col, n - 1 - r).
  for (Vec2 off : {Vec2{0.07, 0.03}, Vec2{-0.11, 0.05}, Vec2{0.013, -0.17}}) {
    const Vec2 p{c.x + off.x, c.y + off.y};
    std::set<std::size_t> expect;
    for (auto cell : env().footprint(p, 0.0)) {
      const std::size_t r = cell / n, col = cell % n;
      expect.insert(col * n + (n - 1 - r));
    }
    const auto got_v = env().footprint(p, std::numbers::pi / 2);
    const std::set<std::size_t> got(got_v.begin(), got_v.end());
    std::size_t diff = 0;
    for (auto x : expect) diff += got.count(x) ? 0 : 1;
    for (auto x : got) diff += expect.count(x) ? 0 : 1;
    CHECK(diff <= 1);
  }
}

TEST_CASE("segmentation mask: gripper-only scene equals the gripper footprint") {
  SceneState s;
  s.gripper.pos = {-0.3, 0.02};
  // Park target and receptacle on the gripper so only one footprint is visible.
  s.target.pos = s.gripper.pos;
  s.receptacle = s.gripper.pos;
  const auto m = env().segmentation_mask(s);
  std::vector<std::uint8_t> expect(plane(), 0);
  for (auto cell : env().footprint(s.gripper.pos, 0.0)) expect[cell] = 1;
  CHECK(m.cells == expect);
}

TEST_CASE("segmentation mask: invariant to distractors and texture, and within the three footprints") {
  for (int n_d : {0, 4}) {
    auto sc = make_scenario(ScenarioKind::clutter_ood, splits(), n_d == 0 ? 2 : n_d);
    for (std::uint64_t i = 0; i < 50; ++i) {
      Rng rng = make_rng(31, i);
      auto [s, obs] = env().reset(sc, rng);
      auto bare = s;
      bare.distractors.clear();
      bare.texture_id = (s.texture_id + 3) % kNumTextures;
      const auto m = env().segmentation_mask(s);
      CHECK(m == env().segmentation_mask(bare));
      std::vector<std::uint8_t> uni(plane(), 0);
      for (Vec2 p : {s.gripper.pos, s.target.pos, s.receptacle})
        for (auto cell : env().footprint(p, s.camera_angle)) uni[cell] = 1;
      for (std::size_t k = 0; k < plane(); ++k) CHECK(m.cells[k] <= uni[k]);
      CHECK(m.cells == uni);
    }
  }
}

TEST_CASE("render_background: entity channels are zero and background matches the full render") {
  const auto sc = make_scenario(ScenarioKind::train, splits(), 1);
  Rng rng = make_rng(41, 0);
  auto [s, obs] = env().reset(sc, rng);
  for (int tex = 0; tex < kNumTextures; ++tex) {
    s.texture_id = tex;
    const auto bg = env().render_background(tex, s.lighting, s.camera_angle);
    const auto full = env().render(s);
    for (std::size_t ch = 0; ch < kGridChannels; ++ch) {
      for (std::size_t k = 0; k < plane(); ++k) {
        const float v = bg[ch * plane() + k];
        if (ch < channel::background_begin) {
          CHECK(v == 0.0f);
        } else {
          CHECK(v == full.grid[ch * plane() + k]);
        }
      }
    }
  }
  const auto a = env().render_background(0, LightingConfig::identity(), 0.0);
  const auto b = env().render_background(1, LightingConfig::identity(), 0.0);
  CHECK_FALSE(a == b);
}

TEST_CASE("observation: occupancy bounded by lit unit value and grid finite under eval lighting") {
  auto sc = make_scenario(ScenarioKind::lighting_ood, splits());
  for (std::uint64_t i = 0; i < 50; ++i) {
    Rng rng = make_rng(51, i);
    auto [s, obs] = env().reset(sc, rng);
    CHECK(obs.grid.all_finite());
    const float hi = s.lighting.gain[channel::occupancy] + s.lighting.bias[channel::occupancy];
    for (std::size_t k = 0; k < plane(); ++k) {
      const float v = obs.grid[channel::occupancy * plane() + k];
      CHECK(v >= 0.0f);
      CHECK(v <= hi + 1e-6f);
    }
  }
}

TEST_CASE("to_action validates raw vectors") {
  const std::vector<float> three{0.1f, 0.2f, 0.3f};
  CHECK(std::holds_alternative<ContinuousAction>(to_action(ActionHead::continuous, three)));
  const std::vector<float> bad{6.0f};
  CHECK_THROWS_AS(to_action(ActionHead::discrete, bad), ContractError);
  const std::vector<float> ok{4.0f};
  CHECK(std::get<DiscreteAction>(to_action(ActionHead::discrete, ok)) == DiscreteAction::grasp);
  CHECK_THROWS_AS(to_action(ActionHead::continuous, ok), ContractError);
}

TEST_CASE("config validation") {
  EnvConfig c;
  c.horizon = 0;
  CHECK_THROWS_AS(Tabletop{c}, ConfigError);
  c = EnvConfig{};
  c.grasp_radius = 0.0;
  CHECK_THROWS_AS(Tabletop{c}, ConfigError);
}
