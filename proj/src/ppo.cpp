#include "pairrl/ppo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "pairrl/errors.hpp"

namespace pairrl {

namespace {

constexpr std::uint64_t kInitStream = 1'000'003;
constexpr std::uint64_t kBankStream = 1'000'004;
constexpr std::uint64_t kShuffleStream = 1'000'005;

std::string to_string(PreservingMode m) { return m == PreservingMode::composite ? "composite" : "viewpoint"; }

PreservingMode parse_mode(const std::string& s) {
  if (s == "composite") return PreservingMode::composite;
  if (s == "viewpoint") return PreservingMode::viewpoint;
  throw ConfigError("unknown preserving_mode '" + s + "'");
}

std::string to_string(HeadKind h) { return h == HeadKind::gaussian ? "gaussian" : "categorical"; }

HeadKind parse_head(const std::string& s) {
  if (s == "gaussian") return HeadKind::gaussian;
  if (s == "categorical") return HeadKind::categorical;
  throw ConfigError("unknown head '" + s + "'");
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  require(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0, 1]");
  require(clip_eps > 0.0, "clip_eps must be positive");
  require(update_epochs >= 1, "update_epochs must be at least 1");
  require(n_envs >= 1 && interaction_steps >= 1, "n_envs and interaction_steps must be positive");
  require(global_batch_size == n_envs * interaction_steps, "global_batch_size must equal n_envs * interaction_steps");
  require(minibatch_size >= 1 && minibatch_size <= global_batch_size, "minibatch_size must lie in [1, global_batch_size]");
  require(global_batch_size % minibatch_size == 0, "minibatch_size must divide global_batch_size");
  require(actor_lr > 0.0 && critic_lr > 0.0, "learning rates must be positive");
  require(alpha >= 0.0 && beta >= 0.0, "alpha and beta must be non-negative");
  require(sens_clip > 0.0, "sens_clip must be positive");
  require(entropy_coef >= 0.0 && value_coef >= 0.0, "loss coefficients must be non-negative");
  require(max_grad_norm > 0.0, "max_grad_norm must be positive");
  require(total_updates >= 0, "total_updates must be non-negative");
  require(snapshot_bank_size >= 1, "snapshot_bank_size must be positive");
  require(translation_std >= 0.0, "translation_std must be non-negative");
  require(view_every >= 1, "view_every must be at least 1");
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"gamma", c.gamma},
                        {"lambda", c.lambda},
                        {"clip_eps", c.clip_eps},
                        {"update_epochs", c.update_epochs},
                        {"n_envs", c.n_envs},
                        {"interaction_steps", c.interaction_steps},
                        {"global_batch_size", c.global_batch_size},
                        {"minibatch_size", c.minibatch_size},
                        {"actor_lr", c.actor_lr},
                        {"critic_lr", c.critic_lr},
                        {"alpha", c.alpha},
                        {"beta", c.beta},
                        {"sens_clip", c.sens_clip},
                        {"entropy_coef", c.entropy_coef},
                        {"value_coef", c.value_coef},
                        {"max_grad_norm", c.max_grad_norm},
                        {"total_updates", c.total_updates},
                        {"normalize_advantages", c.normalize_advantages},
                        {"seed", c.seed},
                        {"split_seed", c.split_seed},
                        {"head", to_string(c.head)},
                        {"init_log_std", c.init_log_std},
                        {"preserving_mode", to_string(c.preserving_mode)},
                        {"snapshot_bank_size", c.snapshot_bank_size},
                        {"translation_std", c.translation_std},
                        {"view_every", c.view_every},
                        {"vary_camera", c.vary_camera},
                        {"log_wall_time", c.log_wall_time}};
}

TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::vector<std::string> known = [] {
    std::vector<std::string> keys;
    const auto defaults = config_to_json(TrainConfig{});
    for (const auto& [k, v] : defaults.items()) keys.push_back(k);
    return keys;
  }();
  for (const auto& [k, v] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  const bool batch_given = j.contains("global_batch_size");
  read_field(j, "gamma", c.gamma);
  read_field(j, "lambda", c.lambda);
  read_field(j, "clip_eps", c.clip_eps);
  read_field(j, "update_epochs", c.update_epochs);
  read_field(j, "n_envs", c.n_envs);
  read_field(j, "interaction_steps", c.interaction_steps);
  read_field(j, "global_batch_size", c.global_batch_size);
  read_field(j, "minibatch_size", c.minibatch_size);
  read_field(j, "actor_lr", c.actor_lr);
  read_field(j, "critic_lr", c.critic_lr);
  read_field(j, "alpha", c.alpha);
  read_field(j, "beta", c.beta);
  read_field(j, "sens_clip", c.sens_clip);
  read_field(j, "entropy_coef", c.entropy_coef);
  read_field(j, "value_coef", c.value_coef);
  read_field(j, "max_grad_norm", c.max_grad_norm);
  read_field(j, "total_updates", c.total_updates);
  read_field(j, "normalize_advantages", c.normalize_advantages);
  read_field(j, "seed", c.seed);
  read_field(j, "split_seed", c.split_seed);
  std::string head = to_string(c.head), mode = to_string(c.preserving_mode);
  read_field(j, "head", head);
  read_field(j, "preserving_mode", mode);
  read_field(j, "init_log_std", c.init_log_std);
  c.head = parse_head(head);
  c.preserving_mode = parse_mode(mode);
  read_field(j, "snapshot_bank_size", c.snapshot_bank_size);
  read_field(j, "translation_std", c.translation_std);
  read_field(j, "view_every", c.view_every);
  read_field(j, "vary_camera", c.vary_camera);
  read_field(j, "log_wall_time", c.log_wall_time);
  if (!batch_given) c.global_batch_size = c.n_envs * c.interaction_steps;
  c.validate();
  return c;
}

EnvConfig env_config_for(const TrainConfig& cfg) {
  EnvConfig e;
  e.head = cfg.head == HeadKind::gaussian ? ActionHead::continuous : ActionHead::discrete;
  e.splits = build_splits(cfg.split_seed);
  return e;
}

// ---------------------------------------------------------------------------

PairedViews ViewBuilder::build(const Tabletop& env, const SceneState& state, const Observation& obs, Rng& rng) const {
  PairedViews v;
  if (mode == PreservingMode::composite) {
    if (bank == nullptr || bank->size() == 0) throw ContractError("composite views need a snapshot bank");
    v.preserving = make_preserving_view(obs, env.segmentation_mask(state), *bank, rng, &v.snapshot_index);
  } else {
    if (camera_angles_deg.empty()) throw ContractError("viewpoint views need camera angles");
    std::uniform_int_distribution<std::size_t> pick(0, camera_angles_deg.size() - 1);
    const double target = camera_angles_deg[pick(rng)];
    const double current = state.camera_angle * 180.0 / std::numbers::pi;
    v.angle_offset_deg = target - current;
    v.preserving = make_preserving_view_viewpoint(state, v.angle_offset_deg, env);
  }
  v.altering = make_altering_view(state, noise, env, rng, &v.pose_delta, &v.rotation);
  return v;
}

EnvPool::EnvPool(const Tabletop& env, ScenarioSpec scenario, std::size_t n, std::uint64_t seed)
    : env_(&env), scenario_(std::move(scenario)) {
  if (n == 0) throw ConfigError("need at least one environment");
  slots_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    slots_.push_back(Slot{make_rng(seed, i), {}, {}, 0});
    reset_slot(i);
  }
}

void EnvPool::reset_slot(std::size_t i) {
  auto& s = slots_.at(i);
  auto [state, obs] = env_->reset(scenario_, s.rng);
  s.state = std::move(state);
  s.obs = std::move(obs);
}

RolloutBatch collect_rollouts(const PolicyConfig& pcfg, const ParamSet& snapshot, EnvPool& envs,
                              const ViewBuilder& views, std::size_t horizon) {
  if (horizon == 0) throw ConfigError("horizon must be positive");
  const Tabletop& env = envs.env();
  const std::size_t n = envs.size();
  const std::size_t d = pcfg.input_dim;
  const std::size_t total = n * horizon;
  const ActionHead head = env.config().head;
  const int every = std::max(1, views.every);

  RolloutBatch b;
  b.n_envs = n;
  b.horizon = horizon;
  b.obs = Tensor::matrix(total, d);
  b.preserving = Tensor::matrix(total, d);
  b.altering = Tensor::matrix(total, d);
  b.actions.resize(total);
  b.log_probs.resize(total);
  b.values.resize(total);
  b.rewards.resize(total);
  b.dones.resize(total);
  b.has_views.resize(total);
  b.bootstrap_values.resize(n);

  Tensor feats = Tensor::matrix(n, d);
  auto row = [d](Tensor& t, std::size_t r) { return t.data().subspan(r * d, d); };

  for (std::size_t t = 0; t < horizon; ++t) {
    for (std::size_t e = 0; e < n; ++e) write_features(envs.slot(e).obs, row(feats, e));

    Tape tape;
    auto params = bind_params(tape, snapshot, false);
    auto out = policy_forward(pcfg, params, tape.constant(feats));
    std::vector<std::vector<float>> acts(n);
    for (std::size_t e = 0; e < n; ++e) {
      const auto raw = sample(dist_row(out.dist, e), envs.slot(e).rng);
      acts[e].assign(raw.begin(), raw.end());
    }
    auto lp = log_prob(out.dist, tape.constant(action_tensor<float>(pcfg.head, pcfg.action_dim, acts)));

    for (std::size_t e = 0; e < n; ++e) {
      auto& slot = envs.slot(e);
      const std::size_t i = e * horizon + t;
      std::copy_n(feats.data().begin() + static_cast<std::ptrdiff_t>(e * d), d, row(b.obs, i).begin());
      b.actions[i] = acts[e];
      b.log_probs[i] = lp.value()[e];
      b.values[i] = out.value.value()[e];

      if (static_cast<int>(t) % every == 0) {
        const auto pv = views.build(env, slot.state, slot.obs, slot.rng);
        write_features(pv.preserving, row(b.preserving, i));
        write_features(pv.altering, row(b.altering, i));
        b.has_views[i] = 1;
      } else {
        std::copy_n(feats.data().begin() + static_cast<std::ptrdiff_t>(e * d), d, row(b.preserving, i).begin());
        std::copy_n(feats.data().begin() + static_cast<std::ptrdiff_t>(e * d), d, row(b.altering, i).begin());
      }

      auto res = env.step(slot.state, to_action(head, acts[e]));
      b.rewards[i] = static_cast<float>(res.reward);
      b.dones[i] = res.done ? 1 : 0;
      if (res.done) {
        ++b.episodes_finished;
        if (res.info.success) ++b.episodes_succeeded;
        envs.reset_slot(e);
      } else {
        slot.state = std::move(res.state);
        slot.obs = std::move(res.obs);
      }
    }
  }

  for (std::size_t e = 0; e < n; ++e) write_features(envs.slot(e).obs, row(feats, e));
  const auto ev = evaluate_policy(pcfg, snapshot, feats);
  for (std::size_t e = 0; e < n; ++e) b.bootstrap_values[e] = static_cast<float>(ev.values[e]);
  return b;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, std::optional<double> bootstrap, double gamma,
                      double lambda) {
  const std::size_t t_len = rewards.size();
  if (dones.size() != t_len) throw ContractError("rewards and dones differ in length");
  double last_value = 0.0;
  if (values.size() == t_len + 1) {
    last_value = values[t_len];
  } else if (values.size() == t_len) {
    if (!bootstrap) throw ContractError("bootstrap value required when values has no extra entry");
    last_value = *bootstrap;
  } else {
    throw ContractError("values must have T or T+1 entries");
  }
  GaeResult r;
  r.advantages.assign(t_len, 0.0);
  r.returns.assign(t_len, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = t_len; k-- > 0;) {
    const double next_value = k + 1 < t_len ? values[k + 1] : last_value;
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    r.advantages[k] = next_adv;
    r.returns[k] = next_adv + values[k];
  }
  return r;
}

void compute_batch_gae(RolloutBatch& b, double gamma, double lambda) {
  b.advantages.assign(b.size(), 0.0);
  b.returns.assign(b.size(), 0.0);
  std::vector<double> rew(b.horizon), val(b.horizon);
  for (std::size_t e = 0; e < b.n_envs; ++e) {
    const std::size_t off = e * b.horizon;
    for (std::size_t t = 0; t < b.horizon; ++t) {
      rew[t] = b.rewards[off + t];
      val[t] = b.values[off + t];
    }
    const auto g = compute_gae(rew, val, std::span(b.dones).subspan(off, b.horizon),
                               static_cast<double>(b.bootstrap_values[e]), gamma, lambda);
    std::copy(g.advantages.begin(), g.advantages.end(), b.advantages.begin() + static_cast<std::ptrdiff_t>(off));
    std::copy(g.returns.begin(), g.returns.end(), b.returns.begin() + static_cast<std::ptrdiff_t>(off));
  }
}

template <class R>
Minibatch<R> make_minibatch(const RolloutBatch& b, const PolicyConfig& pcfg, std::span<const std::size_t> idx,
                            bool normalize_advantages) {
  if (idx.empty()) throw ContractError("empty minibatch");
  if (b.advantages.size() != b.size()) throw ContractError("advantages not computed");
  const std::size_t m = idx.size(), d = pcfg.input_dim;
  Minibatch<R> mb;
  mb.obs = BasicTensor<R>::matrix(m, d);
  mb.preserving = BasicTensor<R>::matrix(m, d);
  mb.altering = BasicTensor<R>::matrix(m, d);
  mb.old_log_probs = BasicTensor<R>::matrix(m, 1);
  mb.advantages = BasicTensor<R>::matrix(m, 1);
  mb.returns = BasicTensor<R>::matrix(m, 1);
  mb.old_values = BasicTensor<R>::matrix(m, 1);
  mb.view_mask = BasicTensor<R>::matrix(m, 1);
  std::vector<std::vector<float>> acts(m);

  std::vector<double> adv(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = idx[k];
    if (i >= b.size()) throw ContractError("minibatch index out of range");
    for (std::size_t j = 0; j < d; ++j) {
      mb.obs.at(k, j) = static_cast<R>(b.obs.at(i, j));
      mb.preserving.at(k, j) = static_cast<R>(b.preserving.at(i, j));
      mb.altering.at(k, j) = static_cast<R>(b.altering.at(i, j));
    }
    acts[k] = b.actions[i];
    mb.old_log_probs[k] = static_cast<R>(b.log_probs[i]);
    mb.returns[k] = static_cast<R>(b.returns[i]);
    mb.old_values[k] = static_cast<R>(b.values[i]);
    mb.view_mask[k] = b.has_views[i] ? R(1) : R(0);
    adv[k] = b.advantages[i];
  }
  if (normalize_advantages && m >= 2) {
    const double mu = std::accumulate(adv.begin(), adv.end(), 0.0) / double(m);
    double var = 0.0;
    for (double a : adv) var += (a - mu) * (a - mu);
    const double sd = std::max(std::sqrt(var / double(m)), 1e-8);
    for (auto& a : adv) a = (a - mu) / sd;
  }
  for (std::size_t k = 0; k < m; ++k) mb.advantages[k] = static_cast<R>(adv[k]);
  mb.actions = action_tensor<R>(pcfg.head, pcfg.action_dim, acts);
  return mb;
}

template Minibatch<float> make_minibatch<float>(const RolloutBatch&, const PolicyConfig&, std::span<const std::size_t>,
                                                bool);
template Minibatch<double> make_minibatch<double>(const RolloutBatch&, const PolicyConfig&,
                                                  std::span<const std::size_t>, bool);

// ---------------------------------------------------------------------------

nlohmann::json metrics_to_json(const UpdateMetrics& m) {
  return nlohmann::json{{"step", m.step},
                        {"ppo_loss", m.ppo_loss},
                        {"inv_kl_mean", m.inv_kl_mean},
                        {"sens_kl_mean", m.sens_kl_mean},
                        {"sens_clip_frac", m.sens_clip_frac},
                        {"value_loss", m.value_loss},
                        {"entropy", m.entropy},
                        {"clip_frac", m.clip_frac},
                        {"rollout_success_rate", m.rollout_success_rate},
                        {"wall_ms", m.wall_ms}};
}

std::string metrics_line(const UpdateMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "{\"step\":" << m.step << ",\"ppo_loss\":" << m.ppo_loss << ",\"inv_kl_mean\":" << m.inv_kl_mean
     << ",\"sens_kl_mean\":" << m.sens_kl_mean << ",\"sens_clip_frac\":" << m.sens_clip_frac
     << ",\"value_loss\":" << m.value_loss << ",\"entropy\":" << m.entropy << ",\"clip_frac\":" << m.clip_frac
     << ",\"rollout_success_rate\":" << m.rollout_success_rate << ",\"wall_ms\":" << m.wall_ms << "}";
  return os.str();
}

LossWeights loss_weights(const TrainConfig& cfg) {
  return LossWeights{cfg.clip_eps, cfg.alpha, cfg.beta, cfg.sens_clip, cfg.entropy_coef, cfg.value_coef};
}

ScenarioSpec training_scenario(const TrainConfig& cfg, const SplitTables& splits) {
  auto sc = make_scenario(ScenarioKind::train, splits);
  if (cfg.vary_camera || cfg.preserving_mode == PreservingMode::viewpoint) sc.camera_pool_deg = splits.camera_train_deg;
  return sc;
}

TrainResult train(const TrainConfig& cfg, const Tabletop& env, const TrainHooks& hooks) {
  cfg.validate();
  const auto expected_head = cfg.head == HeadKind::gaussian ? ActionHead::continuous : ActionHead::discrete;
  if (env.config().head != expected_head) throw ConfigError("environment action head does not match policy head");
  const auto& splits = env.config().splits;

  TrainResult result;
  result.policy = PolicyConfig::for_env(env, cfg.head);
  result.policy.init_log_std = cfg.init_log_std;
  const auto& pcfg = result.policy;
  Rng init_rng = make_rng(cfg.seed, kInitStream);
  ParamSet params = init_policy(pcfg, init_rng);

  Rng bank_rng = make_rng(cfg.seed, kBankStream);
  const SnapshotBank bank =
      build_snapshot_bank(env, static_cast<std::size_t>(cfg.snapshot_bank_size), splits.texture_train, bank_rng);
  ViewBuilder vb;
  vb.mode = cfg.preserving_mode;
  vb.bank = &bank;
  vb.noise.translation_std = cfg.translation_std;
  vb.camera_angles_deg = splits.camera_train_deg;
  vb.every = cfg.view_every;

  EnvPool pool(env, training_scenario(cfg, splits), static_cast<std::size_t>(cfg.n_envs), cfg.seed);
  Rng shuffle_rng = make_rng(cfg.seed, kShuffleStream);

  AdamState adam;
  adam.lr = cfg.actor_lr;
  for (const auto& [name, t] : params) {
    if (is_critic_param(name)) adam.lr_by_param[name] = cfg.critic_lr;
  }
  const LossWeights weights = loss_weights(cfg);
  const std::size_t total = static_cast<std::size_t>(cfg.global_batch_size);
  const std::size_t mbs = static_cast<std::size_t>(cfg.minibatch_size);
  std::vector<std::size_t> perm(total);

  ParamSet last_good = params;
  for (int u = 1; u <= cfg.total_updates; ++u) {
    const auto t0 = std::chrono::steady_clock::now();
    UpdateMetrics m;
    m.step = u;
    try {
      auto batch = collect_rollouts(pcfg, params, pool, vb, static_cast<std::size_t>(cfg.interaction_steps));
      compute_batch_gae(batch, cfg.gamma, cfg.lambda);
      m.rollout_success_rate =
          batch.episodes_finished > 0 ? double(batch.episodes_succeeded) / double(batch.episodes_finished) : 0.0;

      int n_mb = 0;
      for (int ep = 0; ep < cfg.update_epochs; ++ep) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), shuffle_rng);
        for (std::size_t s = 0; s < total; s += mbs) {
          const auto idx = std::span<const std::size_t>(perm).subspan(s, mbs);
          const auto mb = make_minibatch<float>(batch, pcfg, idx, cfg.normalize_advantages);
          Tape tape;
          auto tp = bind_params(tape, params, true);
          auto terms = combined_loss(tape, pcfg, tp, mb, weights);
          auto grads = tape.backward(terms.total);
          clip_grad_norm(grads, cfg.max_grad_norm);
          adam_step(params, grads, adam, adam.step + 1);
          ++n_mb;
          m.ppo_loss += terms.ppo.value().item();
          m.inv_kl_mean += terms.inv_kl_mean;
          m.sens_kl_mean += terms.sens_kl_mean;
          m.sens_clip_frac += terms.sens_clip_frac;
          m.value_loss += terms.value.value().item();
          m.entropy += terms.entropy.value().item();
          m.clip_frac += terms.clip_frac;
        }
      }
      for (double* f : {&m.ppo_loss, &m.inv_kl_mean, &m.sens_kl_mean, &m.sens_clip_frac, &m.value_loss, &m.entropy,
                        &m.clip_frac}) {
        *f /= double(n_mb);
      }
      for (const auto& [name, t] : params) {
        if (!t.all_finite()) throw NumericError("parameter '" + name + "' became non-finite");
      }
    } catch (const NumericError& e) {
      result.aborted = true;
      result.error = "update " + std::to_string(u) + ": " + e.what();
      result.params = std::move(last_good);
      return result;
    }
    last_good = params;
    if (cfg.log_wall_time) {
      m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    result.metrics.push_back(m);
    if (hooks.on_update) hooks.on_update(m);
    if (hooks.eval_every > 0 && hooks.on_eval && u % hooks.eval_every == 0) hooks.on_eval(u, params);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace pairrl
