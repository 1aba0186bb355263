#include "pairrl/tabletop.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "pairrl/errors.hpp"

namespace pairrl {

namespace {

constexpr std::uint64_t kEmbeddingSeed = 0x5ca1ab1e0c47ULL;
constexpr std::uint64_t kTextureSeed = 0x7e47e0000ULL;

struct TextureParams {
  std::array<double, 3> base, amp, fx, fy, phase;
};

TextureParams texture_params(int texture_id) {
  Rng rng = make_rng(kTextureSeed, static_cast<std::uint64_t>(texture_id));
  std::uniform_real_distribution<double> base(0.25, 0.6), amp(0.1, 0.3), freq(1.5, 5.0),
      angle(0.0, 2.0 * std::numbers::pi);
  TextureParams p{};
  for (std::size_t c = 0; c < 3; ++c) {
    p.base[c] = base(rng);
    p.amp[c] = amp(rng);
    const double f = freq(rng), a = angle(rng);
    p.fx[c] = f * std::cos(a);
    p.fy[c] = f * std::sin(a);
    p.phase[c] = angle(rng);
  }
  return p;
}

template <class T>
std::size_t pick(Rng& rng, const std::vector<T>& pool) {
  std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
  return d(rng);
}

// First `k` elements of a Fisher-Yates shuffle of `pool`.
std::vector<int> sample_without_replacement(Rng& rng, std::vector<int> pool, std::size_t k) {
  if (k > pool.size()) throw ScenarioError("not enough distinct ids to sample from");
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, pool.size() - 1);
    std::swap(pool[i], pool[d(rng)]);
  }
  pool.resize(k);
  return pool;
}

void check_ids(const std::vector<int>& ids, int limit, const char* what) {
  for (int id : ids) {
    if (id < 0 || id >= limit) throw ScenarioError(std::string("unknown ") + what + " id " + std::to_string(id));
  }
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Rng(seq);
}

void EnvConfig::validate() const {
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (grasp_radius <= 0 || place_radius <= 0) throw ConfigError("radii must be positive");
  if (grid_size < 2) throw ConfigError("grid size must be at least 2");
  if (placement_grid < 1) throw ConfigError("placement grid must be at least 1");
  if (grasp_streak_threshold < 1) throw ConfigError("grasp streak threshold must be at least 1");
  auto disjoint = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::none_of(a.begin(), a.end(), [&](int v) { return std::find(b.begin(), b.end(), v) != b.end(); });
  };
  if (!disjoint(splits.texture_train, splits.texture_eval) || !disjoint(splits.category_train, splits.category_eval) ||
      !disjoint(splits.lighting_train, splits.lighting_eval) ||
      !disjoint(splits.camera_train_deg, splits.camera_eval_deg)) {
    throw ConfigError("split tables must be disjoint");
  }
}

Tabletop::Tabletop(EnvConfig config) : config_(std::move(config)) {
  config_.validate();
  // Category embeddings: best-candidate sampling of unit vectors, keeping the
  // candidate whose largest cosine to the vectors chosen so far is smallest.
  Rng rng = make_rng(kEmbeddingSeed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr int kCandidates = 400;
  while (embeddings_.size() < static_cast<std::size_t>(kNumCategories)) {
    std::array<float, kCategoryEmbeddingDim> best{};
    double best_cos = 2.0;
    for (int c = 0; c < kCandidates; ++c) {
      std::array<double, kCategoryEmbeddingDim> v{};
      double n2 = 0.0;
      for (auto& x : v) {
        x = normal(rng);
        n2 += x * x;
      }
      std::array<float, kCategoryEmbeddingDim> e{};
      for (std::size_t i = 0; i < e.size(); ++i) e[i] = static_cast<float>(v[i] / std::sqrt(n2));
      double worst = -1.0;
      for (const auto& o : embeddings_) {
        double dot = 0.0;
        for (std::size_t i = 0; i < e.size(); ++i) dot += double(e[i]) * o[i];
        worst = std::max(worst, dot);
      }
      if (worst < best_cos) {
        best_cos = worst;
        best = e;
      }
    }
    embeddings_.push_back(best);
  }
}

const std::array<float, kCategoryEmbeddingDim>& Tabletop::category_embedding(int category) const {
  if (category < 0 || category >= kNumCategories) throw ContractError("category id out of range");
  return embeddings_[static_cast<std::size_t>(category)];
}

std::vector<Vec2> Tabletop::inner_grid_points() const {
  std::vector<Vec2> pts;
  const int n = config_.placement_grid;
  const double cell = 2.0 * config_.inner_half_edge / n;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      pts.push_back({config_.workspace_center.x - config_.inner_half_edge + (c + 0.5) * cell,
                     config_.workspace_center.y - config_.inner_half_edge + (r + 0.5) * cell});
  return pts;
}

std::vector<Vec2> Tabletop::border_points() const {
  // 8 points per side at 0.06 spacing for the default half-edge of 0.21.
  const double h = config_.outer_half_edge;
  const int per_side = 7;
  const double step = 2.0 * h / per_side;
  const Vec2 c = config_.workspace_center;
  std::vector<Vec2> pts;
  for (int k = 0; k < per_side; ++k) pts.push_back({c.x - h + k * step, c.y - h});
  for (int k = 0; k < per_side; ++k) pts.push_back({c.x + h, c.y - h + k * step});
  for (int k = 0; k < per_side; ++k) pts.push_back({c.x + h - k * step, c.y + h});
  for (int k = 0; k < per_side; ++k) pts.push_back({c.x - h, c.y + h - k * step});
  return pts;
}

std::vector<std::size_t> Tabletop::footprint(Vec2 p, double camera_angle) const {
  const std::size_t n = config_.grid_size;
  const double e = config_.view_half_extent;
  const double cs = 2.0 * e / static_cast<double>(n);
  const double dx = p.x - config_.workspace_center.x, dy = p.y - config_.workspace_center.y;
  const double ca = std::cos(camera_angle), sa = std::sin(camera_angle);
  const double u = ca * dx - sa * dy;
  const double v = sa * dx + ca * dy;
  const double radius = config_.blob_radius_cells * cs;
  const double r2 = radius * radius;
  std::vector<std::size_t> cells;
  for (std::size_t r = 0; r < n; ++r) {
    const double cv = -e + (static_cast<double>(r) + 0.5) * cs;
    if (std::abs(cv - v) > radius) continue;
    for (std::size_t c = 0; c < n; ++c) {
      const double cu = -e + (static_cast<double>(c) + 0.5) * cs;
      const double d2 = (cu - u) * (cu - u) + (cv - v) * (cv - v);
      if (d2 <= r2) cells.push_back(r * n + c);
    }
  }
  return cells;
}

void Tabletop::paint_background(Tensor& grid, int texture_id, const LightingConfig& lighting,
                                double camera_angle) const {
  if (texture_id < 0 || texture_id >= kNumTextures) throw ContractError("texture id out of range");
  const auto tp = texture_params(texture_id);
  const std::size_t n = config_.grid_size;
  const double e = config_.view_half_extent;
  const double cs = 2.0 * e / static_cast<double>(n);
  const double ca = std::cos(camera_angle), sa = std::sin(camera_angle);
  for (std::size_t r = 0; r < n; ++r) {
    const double v = -e + (static_cast<double>(r) + 0.5) * cs;
    for (std::size_t c = 0; c < n; ++c) {
      const double u = -e + (static_cast<double>(c) + 0.5) * cs;
      // back to table coordinates relative to the workspace centre
      const double wx = ca * u + sa * v;
      const double wy = -sa * u + ca * v;
      for (std::size_t k = 0; k < 3; ++k) {
        const double raw = tp.base[k] + tp.amp[k] * std::sin(2.0 * std::numbers::pi * (tp.fx[k] * wx + tp.fy[k] * wy) +
                                                             tp.phase[k]);
        const std::size_t ch = channel::background_begin + k;
        grid[(ch * n + r) * n + c] = static_cast<float>(lighting.gain[ch] * raw + lighting.bias[ch]);
      }
    }
  }
}

Tensor Tabletop::render_background(int texture_id, const LightingConfig& lighting, double camera_angle) const {
  Tensor grid(grid_shape(), 0.0f);
  paint_background(grid, texture_id, lighting, camera_angle);
  return grid;
}

Observation Tabletop::render(const SceneState& s) const {
  const std::size_t n = config_.grid_size;
  const std::size_t plane = n * n;
  Observation obs;
  obs.grid = Tensor(grid_shape(), 0.0f);
  auto& g = obs.grid;
  const auto& light = s.lighting;
  auto lit = [&](std::size_t ch, float v) { return light.gain[ch] * v + light.bias[ch]; };

  for (auto cell : footprint(s.gripper.pos, s.camera_angle)) g[channel::gripper * plane + cell] = lit(channel::gripper, 1.0f);
  for (auto cell : footprint(s.receptacle, s.camera_angle))
    g[channel::receptacle * plane + cell] = lit(channel::receptacle, 1.0f);

  // Objects: occupancy everywhere covered, embedding of the nearest covering object.
  std::vector<double> best(plane, std::numeric_limits<double>::infinity());
  std::vector<int> owner(plane, -1);
  const double ca = std::cos(s.camera_angle), sa = std::sin(s.camera_angle);
  const double e = config_.view_half_extent;
  const double cs = 2.0 * e / static_cast<double>(n);
  for (int id = 0; id < static_cast<int>(s.entity_count()); ++id) {
    const auto& obj = s.entity(id);
    const double dx = obj.pos.x - config_.workspace_center.x, dy = obj.pos.y - config_.workspace_center.y;
    const double u = ca * dx - sa * dy, v = sa * dx + ca * dy;
    for (auto cell : footprint(obj.pos, s.camera_angle)) {
      const double cu = -e + (static_cast<double>(cell % n) + 0.5) * cs;
      const double cv = -e + (static_cast<double>(cell / n) + 0.5) * cs;
      const double d2 = (cu - u) * (cu - u) + (cv - v) * (cv - v);
      if (d2 < best[cell]) {
        best[cell] = d2;
        owner[cell] = id;
      }
    }
  }
  for (std::size_t cell = 0; cell < plane; ++cell) {
    if (owner[cell] < 0) continue;
    g[channel::occupancy * plane + cell] = lit(channel::occupancy, 1.0f);
    const auto& emb = category_embedding(s.entity(owner[cell]).category);
    for (std::size_t k = 0; k < kCategoryEmbeddingDim; ++k) {
      const std::size_t ch = channel::category_begin + k;
      g[ch * plane + cell] = lit(ch, emb[k]);
    }
  }

  paint_background(g, s.texture_id, light, s.camera_angle);

  const Vec2 c = config_.workspace_center;
  obs.proprio = {static_cast<float>((s.gripper.pos.x - c.x) / config_.reach_half_extent),
                 static_cast<float>((s.gripper.pos.y - c.y) / config_.reach_half_extent),
                 s.gripper.closed ? 1.0f : 0.0f};
  obs.instruction.assign(kNumCategories, 0.0f);
  obs.instruction[static_cast<std::size_t>(s.target.category)] = 1.0f;
  return obs;
}

Mask Tabletop::segmentation_mask(const SceneState& s) const {
  Mask m;
  m.height = m.width = config_.grid_size;
  m.cells.assign(m.height * m.width, 0);
  for (Vec2 p : {s.gripper.pos, s.target.pos, s.receptacle})
    for (auto cell : footprint(p, s.camera_angle)) m.cells[cell] = 1;
  return m;
}

std::pair<SceneState, Observation> Tabletop::reset(const ScenarioSpec& sc, Rng& rng) const {
  if (sc.texture_pool.empty() || sc.category_pool.empty() || sc.lighting_pool.empty()) {
    throw ScenarioError("scenario pools must be non-empty");
  }
  check_ids(sc.texture_pool, kNumTextures, "texture");
  check_ids(sc.category_pool, kNumCategories, "category");
  check_ids(sc.heldout_category_pool, kNumCategories, "category");
  check_ids(sc.lighting_pool, static_cast<int>(config_.splits.lighting.size()), "lighting");
  if (sc.n_distractors < 0) throw ScenarioError("negative distractor count");

  SceneState s;
  s.texture_id = sc.texture_pool[pick(rng, sc.texture_pool)];
  s.lighting = config_.splits.lighting_config(sc.lighting_pool[pick(rng, sc.lighting_pool)]);
  const double angle_deg = sc.camera_pool_deg.empty() ? sc.camera_angle_deg
                                                      : sc.camera_pool_deg[pick(rng, sc.camera_pool_deg)];
  s.camera_angle = angle_deg * std::numbers::pi / 180.0;

  s.target.category = sc.category_pool[pick(rng, sc.category_pool)];
  auto without_target = [&](const std::vector<int>& pool) {
    std::vector<int> out;
    for (int c : pool)
      if (c != s.target.category && std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    return out;
  };
  const std::size_t n = static_cast<std::size_t>(sc.n_distractors);
  const std::size_t n_held = sc.heldout_category_pool.empty() ? 0 : n / 2;
  std::vector<int> cats = sample_without_replacement(rng, without_target(sc.category_pool), n - n_held);
  const auto held = sample_without_replacement(rng, without_target(sc.heldout_category_pool), n_held);
  cats.insert(cats.end(), held.begin(), held.end());

  const bool border = sc.pose_region == PoseRegion::border;
  const auto inner = inner_grid_points();
  const std::size_t needed = 1 + n + (border ? 0 : 1);
  if (needed > inner.size()) {
    throw ScenarioError(std::to_string(needed) + " entities do not fit on " + std::to_string(inner.size()) +
                        " grid cells");
  }
  std::vector<int> idx(inner.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  const auto cells = sample_without_replacement(rng, idx, needed);
  std::size_t next = 0;
  s.receptacle = inner[static_cast<std::size_t>(cells[next++])];
  if (border) {
    const auto ring = border_points();
    s.target.pos = ring[pick(rng, ring)];
  } else {
    s.target.pos = inner[static_cast<std::size_t>(cells[next++])];
  }
  std::uniform_int_distribution<std::size_t> orient(0, kOrientations.size() - 1);
  s.target.theta = kOrientations[orient(rng)];
  for (std::size_t i = 0; i < n; ++i) {
    ObjectState d;
    d.pos = inner[static_cast<std::size_t>(cells[next++])];
    d.theta = kOrientations[orient(rng)];
    d.category = cats[i];
    s.distractors.push_back(d);
  }
  s.gripper.pos = config_.gripper_home;
  s.gripper.closed = false;
  Observation obs = render(s);
  return {std::move(s), std::move(obs)};
}

Vec2 Tabletop::clamp_to_reach(Vec2 p) const {
  const Vec2 c = config_.workspace_center;
  const double h = config_.reach_half_extent;
  return {std::clamp(p.x, std::max(-1.0, c.x - h), std::min(1.0, c.x + h)),
          std::clamp(p.y, std::max(-1.0, c.y - h), std::min(1.0, c.y + h))};
}

StepResult Tabletop::step(const SceneState& state, const Action& action) const {
  if (terminal(state)) throw ContractError("step called on a terminal state");
  StepResult out;
  SceneState& s = out.state;
  s = state;

  double dx = 0.0, dy = 0.0;
  bool close = s.gripper.closed;
  if (const auto* ca = std::get_if<ContinuousAction>(&action)) {
    if (config_.head != ActionHead::continuous) throw ContractError("continuous action given to a discrete env");
    if (!std::isfinite(ca->dx) || !std::isfinite(ca->dy) || !std::isfinite(ca->grip_logit)) {
      throw ContractError("non-finite action");
    }
    dx = std::clamp(config_.action_scale * ca->dx, -config_.max_delta, config_.max_delta);
    dy = std::clamp(config_.action_scale * ca->dy, -config_.max_delta, config_.max_delta);
    close = ca->grip_logit > 0.0f;
  } else {
    if (config_.head != ActionHead::discrete) throw ContractError("discrete action given to a continuous env");
    const auto da = std::get<DiscreteAction>(action);
    const int k = static_cast<int>(da);
    if (k < 0 || k >= kNumDiscreteActions) throw ContractError("discrete action out of range");
    const double st = config_.discrete_step;
    switch (da) {
      case DiscreteAction::plus_x: dx = st; break;
      case DiscreteAction::minus_x: dx = -st; break;
      case DiscreteAction::plus_y: dy = st; break;
      case DiscreteAction::minus_y: dy = -st; break;
      case DiscreteAction::grasp: close = true; break;
      case DiscreteAction::release: close = false; break;
    }
  }

  s.gripper.pos = clamp_to_reach({s.gripper.pos.x + dx, s.gripper.pos.y + dy});
  if (s.gripper.grasped_id) s.entity(*s.gripper.grasped_id).pos = s.gripper.pos;
  s.gripper.closed = close;

  bool success = false;
  if (close) {
    if (!s.gripper.grasped_id) {
      int best = -1;
      double best_d = config_.grasp_radius;
      for (int id = 0; id < static_cast<int>(s.entity_count()); ++id) {
        const double d = distance(s.entity(id).pos, s.gripper.pos);
        if (d < best_d || (d == best_d && best < 0)) {
          best = id;
          best_d = d;
        }
      }
      if (best >= 0) {
        s.gripper.grasped_id = best;
        s.entity(best).pos = s.gripper.pos;
      }
    }
  } else if (s.gripper.grasped_id) {
    const int released = *s.gripper.grasped_id;
    s.gripper.grasped_id.reset();
    if (released == 0 && distance(s.target.pos, s.receptacle) <= config_.place_radius) success = true;
  }

  const bool holding_target = s.gripper.grasped_id && *s.gripper.grasped_id == 0;
  s.grasp_streak = holding_target ? s.grasp_streak + 1 : 0;

  double reward = 0.0;
  if (holding_target && !s.grasp_reward_given) {
    reward += 0.1;
    s.grasp_reward_given = true;
  }
  if (s.grasp_streak >= config_.grasp_streak_threshold && !s.streak_reward_given) {
    reward += 0.1;
    s.streak_reward_given = true;
  }
  if (success && !s.succeeded) {
    reward += 1.0;
    s.succeeded = true;
  }
  s.step_count += 1;

  out.reward = reward;
  out.done = terminal(s);
  out.info.target_grasped = holding_target;
  out.info.success = success;
  out.info.grasped_id = s.gripper.grasped_id;
  out.obs = render(s);
  return out;
}

Action to_action(ActionHead head, std::span<const float> raw) {
  if (head == ActionHead::continuous) {
    if (raw.size() != 3) throw ContractError("continuous action needs 3 values");
    return ContinuousAction{raw[0], raw[1], raw[2]};
  }
  if (raw.size() != 1) throw ContractError("discrete action needs 1 value");
  const float k = raw[0];
  if (!(k >= 0.0f && k < static_cast<float>(kNumDiscreteActions)) || k != std::floor(k)) {
    throw ContractError("discrete action index out of range");
  }
  return static_cast<DiscreteAction>(static_cast<int>(k));
}

std::string state_digest(const SceneState& s) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ULL;
    }
  };
  auto mixd = [&](double v) { mix(std::bit_cast<std::uint64_t>(v)); };
  auto mixo = [&](const ObjectState& o) {
    mixd(o.pos.x);
    mixd(o.pos.y);
    mixd(o.theta);
    mix(static_cast<std::uint64_t>(o.category));
  };
  mixd(s.gripper.pos.x);
  mixd(s.gripper.pos.y);
  mix(s.gripper.closed);
  mix(s.gripper.grasped_id ? static_cast<std::uint64_t>(*s.gripper.grasped_id) + 1 : 0);
  mixo(s.target);
  mix(s.distractors.size());
  for (const auto& d : s.distractors) mixo(d);
  mixd(s.receptacle.x);
  mixd(s.receptacle.y);
  mix(static_cast<std::uint64_t>(s.texture_id));
  for (std::size_t c = 0; c < kGridChannels; ++c) {
    mix(std::bit_cast<std::uint32_t>(s.lighting.gain[c]));
    mix(std::bit_cast<std::uint32_t>(s.lighting.bias[c]));
  }
  mixd(s.camera_angle);
  mix(static_cast<std::uint64_t>(s.step_count));
  mix(static_cast<std::uint64_t>(s.grasp_streak));
  mix(s.grasp_reward_given);
  mix(s.streak_reward_given);
  mix(s.succeeded);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pairrl
