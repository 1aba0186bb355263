#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrl/adam.hpp"
#include "pairrl/autodiff.hpp"
#include "pairrl/policy.hpp"
#include "pairrl/tabletop.hpp"
#include "pairrl/views.hpp"

namespace pairrl {

enum class PreservingMode { composite, viewpoint };

struct TrainConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip_eps = 0.2;
  int update_epochs = 1;
  int n_envs = 8;
  int interaction_steps = 80;
  int global_batch_size = 640;
  int minibatch_size = 160;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double alpha = 0.0;
  double beta = 0.0;
  double sens_clip = 0.8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int total_updates = 300;
  bool normalize_advantages = true;
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;

  HeadKind head = HeadKind::gaussian;
  double init_log_std = -0.5;
  PreservingMode preserving_mode = PreservingMode::composite;
  int snapshot_bank_size = 16;
  double translation_std = 0.06;
  // Build paired views on every k-th interaction step (1 = every step).
  int view_every = 1;
  // Train with per-episode camera angles drawn from the training camera set.
  bool vary_camera = false;
  // wall_ms is written as 0 unless set, keeping metrics streams reproducible.
  bool log_wall_time = false;

  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
/// Fields missing from `j` keep the values already in `base`.
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});

/// Environment configuration matching a training configuration.
EnvConfig env_config_for(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Rollouts

/// Transitions stored env-major: index = env * horizon + t.
struct RolloutBatch {
  std::size_t n_envs = 0;
  std::size_t horizon = 0;
  Tensor obs;         // [N, D]
  Tensor preserving;  // [N, D]
  Tensor altering;    // [N, D]
  std::vector<std::vector<float>> actions;
  std::vector<float> log_probs;  // under the snapshot that sampled the actions
  std::vector<float> values;
  std::vector<float> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<std::uint8_t> has_views;
  std::vector<float> bootstrap_values;  // per env, V(o_T)
  std::vector<double> advantages;
  std::vector<double> returns;
  int episodes_finished = 0;
  int episodes_succeeded = 0;

  std::size_t size() const { return log_probs.size(); }
};

/// View construction settings shared by all environments of a run.
struct ViewBuilder {
  PreservingMode mode = PreservingMode::composite;
  const SnapshotBank* bank = nullptr;
  PoseNoise noise;
  std::vector<int> camera_angles_deg;  // viewpoint mode: resulting angles to draw from
  int every = 1;

  PairedViews build(const Tabletop& env, const SceneState& state, const Observation& obs, Rng& rng) const;
};

/// Parallel environment slots, each with its own RNG stream and auto-reset.
class EnvPool {
 public:
  EnvPool(const Tabletop& env, ScenarioSpec scenario, std::size_t n, std::uint64_t seed);

  std::size_t size() const { return slots_.size(); }
  const Tabletop& env() const { return *env_; }

  struct Slot {
    Rng rng;
    SceneState state;
    Observation obs;
    int step_in_batch = 0;
  };
  Slot& slot(std::size_t i) { return slots_[i]; }
  const Slot& slot(std::size_t i) const { return slots_[i]; }
  void reset_slot(std::size_t i);

 private:
  const Tabletop* env_;
  ScenarioSpec scenario_;
  std::vector<Slot> slots_;
};

/// Samples `horizon` steps in every environment under a frozen parameter
/// snapshot and builds both paired views of each observation.
RolloutBatch collect_rollouts(const PolicyConfig& pcfg, const ParamSet& snapshot, EnvPool& envs,
                              const ViewBuilder& views, std::size_t horizon);

/// Generalised advantage estimation over one trajectory segment.
/// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}; returns = A + V.
/// `values` may hold one extra bootstrap entry, otherwise `bootstrap` is used.
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, std::optional<double> bootstrap, double gamma,
                      double lambda);

/// Fills batch.advantages / batch.returns env by env.
void compute_batch_gae(RolloutBatch& batch, double gamma, double lambda);

// ---------------------------------------------------------------------------
// Losses

template <class R>
struct Minibatch {
  BasicTensor<R> obs;
  BasicTensor<R> preserving;
  BasicTensor<R> altering;
  BasicTensor<R> actions;        // [B, A] raw or one-hot
  BasicTensor<R> old_log_probs;  // [B, 1]
  BasicTensor<R> advantages;     // [B, 1]
  BasicTensor<R> returns;        // [B, 1]
  BasicTensor<R> old_values;     // [B, 1]
  BasicTensor<R> view_mask;      // [B, 1], 1 where paired views exist

  std::size_t size() const { return obs.rows(); }
};

/// Gathers rows of `batch` (advantages normalised when requested and the
/// minibatch has at least two samples).
template <class R>
Minibatch<R> make_minibatch(const RolloutBatch& batch, const PolicyConfig& pcfg, std::span<const std::size_t> idx,
                            bool normalize_advantages);

struct LossWeights {
  double clip_eps = 0.2;
  double alpha = 0.0;
  double beta = 0.0;
  double sens_clip = 0.8;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
};

template <class R>
struct LossTerms {
  BasicVar<R> ppo;
  BasicVar<R> invariance;
  BasicVar<R> sensitivity;
  BasicVar<R> value;
  BasicVar<R> entropy;
  BasicVar<R> total;
  // Diagnostics (no gradients).
  double inv_kl_mean = 0.0;
  double sens_kl_mean = 0.0;
  double sens_clip_frac = 0.0;
  double clip_frac = 0.0;
};

/// -mean min(w A, clip(w, 1-eps, 1+eps) A) with w = exp(log_prob - old_log_prob).
/// Throws NumericError naming the first sample whose ratio is not finite.
template <class R>
BasicVar<R> ppo_surrogate(BasicVar<R> log_prob, BasicVar<R> old_log_prob, BasicVar<R> advantages, double eps) {
  auto ratio = exp(log_prob - old_log_prob);
  const auto& w = ratio.value();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!std::isfinite(static_cast<double>(w[i]))) {
      throw NumericError("non-finite importance ratio at sample " + std::to_string(i));
    }
  }
  auto unclipped = ratio * advantages;
  auto clipped = clamp(ratio, 1.0 - eps, 1.0 + eps) * advantages;
  return -mean(minimum(unclipped, clipped));
}

namespace detail {
template <class R>
BasicVar<R> masked_mean(BasicVar<R> per_sample, BasicVar<R> mask) {
  const auto& m = mask.value();
  double count = 0.0;
  for (auto v : m.data()) count += v;
  if (count == 0.0) return scale(sum(per_sample * mask), 0.0);
  return scale(sum(per_sample * mask), 1.0 / count);
}

template <class R>
double masked_average(const BasicTensor<R>& values, const BasicTensor<R>& mask, bool indicator_above = false,
                      double threshold = 0.0) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i] == R(0)) continue;
    den += 1.0;
    num += indicator_above ? (values[i] > threshold ? 1.0 : 0.0) : double(values[i]);
  }
  return den > 0.0 ? num / den : 0.0;
}
}  // namespace detail

/// mean_t KL(pi(.|o_t) || sg[pi(.|view_t)]) over samples with views.
template <class R>
BasicVar<R> invariance_term(const DistVars<R>& current, const DistVars<R>& view, BasicVar<R> mask) {
  return detail::masked_mean(kl(current, stop_grad(view)), mask);
}

/// -mean_t min(c, KL(pi(.|o_t) || sg[pi(.|view_t)])), clipped per sample.
template <class R>
BasicVar<R> sensitivity_term(const DistVars<R>& current, const DistVars<R>& view, BasicVar<R> mask, double c) {
  return -detail::masked_mean(clip_min(kl(current, stop_grad(view)), c), mask);
}

/// mean max((V - R)^2, (V_old + clip(V - V_old, -eps, eps) - R)^2).
template <class R>
BasicVar<R> clipped_value_loss(BasicVar<R> value, BasicVar<R> old_value, BasicVar<R> returns, double eps) {
  auto raw = square(value - returns);
  auto clipped_pred = old_value + clamp(value - old_value, -eps, eps);
  auto clipped = square(clipped_pred - returns);
  return mean(maximum(raw, clipped));
}

/// PPO clipped-surrogate loss on a minibatch (own forward pass).
template <class R>
BasicVar<R> ppo_loss(BasicTape<R>& tape, const PolicyConfig& pcfg, const TapeParams<R>& params,
                     const Minibatch<R>& mb, double eps) {
  if (mb.size() == 0) throw ContractError("empty minibatch");
  auto out = policy_forward(pcfg, params, tape.constant(mb.obs));
  auto lp = log_prob(out.dist, tape.constant(mb.actions));
  return ppo_surrogate(lp, tape.constant(mb.old_log_probs), tape.constant(mb.advantages), eps);
}

template <class R>
BasicVar<R> invariance_loss(BasicTape<R>& tape, const PolicyConfig& pcfg, const TapeParams<R>& params,
                            const Minibatch<R>& mb) {
  auto cur = policy_forward(pcfg, params, tape.constant(mb.obs));
  auto view = policy_forward(pcfg, params, tape.constant(mb.preserving));
  return invariance_term(cur.dist, view.dist, tape.constant(mb.view_mask));
}

template <class R>
BasicVar<R> sensitivity_loss(BasicTape<R>& tape, const PolicyConfig& pcfg, const TapeParams<R>& params,
                             const Minibatch<R>& mb, double c) {
  if (!(c > 0.0)) throw ContractError("sensitivity clip must be positive");
  auto cur = policy_forward(pcfg, params, tape.constant(mb.obs));
  auto view = policy_forward(pcfg, params, tape.constant(mb.altering));
  return sensitivity_term(cur.dist, view.dist, tape.constant(mb.view_mask), c);
}

template <class R>
BasicVar<R> value_loss(BasicTape<R>& tape, const PolicyConfig& pcfg, const TapeParams<R>& params,
                       const Minibatch<R>& mb, double eps) {
  auto out = policy_forward(pcfg, params, tape.constant(mb.obs));
  return clipped_value_loss(out.value, tape.constant(mb.old_values), tape.constant(mb.returns), eps);
}

/// ppo + alpha inv + beta sens + value_coef value - entropy_coef entropy, with
/// one forward pass on the original view and gradient-free passes on the
/// paired views.
template <class R>
LossTerms<R> combined_loss(BasicTape<R>& tape, const PolicyConfig& pcfg, const TapeParams<R>& params,
                           const Minibatch<R>& mb, const LossWeights& w) {
  if (mb.size() == 0) throw ContractError("empty minibatch");
  if (w.alpha < 0.0 || w.beta < 0.0) throw ContractError("auxiliary coefficients must be non-negative");
  if (!(w.sens_clip > 0.0)) throw ContractError("sensitivity clip must be positive");
  LossTerms<R> t;
  auto cur = policy_forward(pcfg, params, tape.constant(mb.obs));
  auto prev = policy_forward(pcfg, params, tape.constant(mb.preserving));
  auto alt = policy_forward(pcfg, params, tape.constant(mb.altering));
  auto mask = tape.constant(mb.view_mask);

  auto lp = log_prob(cur.dist, tape.constant(mb.actions));
  auto old_lp = tape.constant(mb.old_log_probs);
  t.ppo = ppo_surrogate(lp, old_lp, tape.constant(mb.advantages), w.clip_eps);
  auto inv_kl = kl(cur.dist, stop_grad(prev.dist));
  auto sens_kl = kl(cur.dist, stop_grad(alt.dist));
  t.invariance = detail::masked_mean(inv_kl, mask);
  t.sensitivity = -detail::masked_mean(clip_min(sens_kl, w.sens_clip), mask);
  t.value = clipped_value_loss(cur.value, tape.constant(mb.old_values), tape.constant(mb.returns), w.clip_eps);
  t.entropy = mean(entropy(cur.dist));

  t.total = t.ppo + scale(t.invariance, w.alpha) + scale(t.sensitivity, w.beta) + scale(t.value, w.value_coef) -
            scale(t.entropy, w.entropy_coef);

  t.inv_kl_mean = detail::masked_average(inv_kl.value(), mb.view_mask);
  t.sens_kl_mean = detail::masked_average(sens_kl.value(), mb.view_mask);
  t.sens_clip_frac = detail::masked_average(sens_kl.value(), mb.view_mask, true, w.sens_clip);
  double clipped = 0.0;
  const auto& lpv = lp.value();
  for (std::size_t i = 0; i < lpv.size(); ++i) {
    const double ratio = std::exp(double(lpv[i]) - double(mb.old_log_probs[i]));
    if (std::abs(ratio - 1.0) > w.clip_eps) clipped += 1.0;
  }
  t.clip_frac = clipped / static_cast<double>(lpv.size());
  return t;
}

// ---------------------------------------------------------------------------
// Training

struct UpdateMetrics {
  int step = 0;
  double ppo_loss = 0.0;
  double inv_kl_mean = 0.0;
  double sens_kl_mean = 0.0;
  double sens_clip_frac = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double rollout_success_rate = 0.0;
  double wall_ms = 0.0;
};

nlohmann::json metrics_to_json(const UpdateMetrics& m);
/// One JSON Lines record; floats use 6 significant digits.
std::string metrics_line(const UpdateMetrics& m);

struct TrainHooks {
  std::function<void(const UpdateMetrics&)> on_update;
  // Called after every `eval_every` updates with the current parameters.
  int eval_every = 0;
  std::function<void(int step, const ParamSet&)> on_eval;
};

struct TrainResult {
  ParamSet params;
  PolicyConfig policy;
  std::vector<UpdateMetrics> metrics;
  bool aborted = false;
  std::string error;
};

LossWeights loss_weights(const TrainConfig& cfg);

/// Scenario the training environments sample from.
ScenarioSpec training_scenario(const TrainConfig& cfg, const SplitTables& splits);

TrainResult train(const TrainConfig& cfg, const Tabletop& env, const TrainHooks& hooks = {});

}  // namespace pairrl
