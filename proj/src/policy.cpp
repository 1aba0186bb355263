#include "pairrl/policy.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "pairrl/errors.hpp"

namespace pairrl {

PolicyConfig PolicyConfig::for_env(const Tabletop& env, HeadKind head) {
  PolicyConfig cfg;
  cfg.head = head;
  cfg.input_dim = feature_dim(env);
  cfg.action_dim = head == HeadKind::gaussian ? 3 : static_cast<std::size_t>(kNumDiscreteActions);
  cfg.grid_plane = env.grid_size() * env.grid_size();
  cfg.category_offset = channel::category_begin * cfg.grid_plane;
  cfg.category_channels = kCategoryEmbeddingDim;
  cfg.instruction_offset = shape_numel(env.grid_shape()) + kProprioDim;
  cfg.instruction_dim = static_cast<std::size_t>(kNumCategories);
  return cfg;
}

std::size_t feature_dim(const Tabletop& env) {
  return shape_numel(env.grid_shape()) + kProprioDim + static_cast<std::size_t>(kNumCategories);
}

void write_features(const Observation& obs, std::span<float> out) {
  const std::size_t g = obs.grid.size();
  if (out.size() != g + obs.proprio.size() + obs.instruction.size()) {
    throw DimensionError("feature buffer has wrong length");
  }
  std::copy(obs.grid.data().begin(), obs.grid.data().end(), out.begin());
  std::copy(obs.proprio.begin(), obs.proprio.end(), out.begin() + static_cast<std::ptrdiff_t>(g));
  std::copy(obs.instruction.begin(), obs.instruction.end(),
            out.begin() + static_cast<std::ptrdiff_t>(g + obs.proprio.size()));
}

Tensor stack_features(std::span<const Observation* const> obs) {
  if (obs.empty()) throw ContractError("no observations to stack");
  const std::size_t d = obs.front()->grid.size() + kProprioDim + obs.front()->instruction.size();
  Tensor out = Tensor::matrix(obs.size(), d);
  for (std::size_t i = 0; i < obs.size(); ++i) write_features(*obs[i], out.data().subspan(i * d, d));
  return out;
}

ParamSet init_policy(const PolicyConfig& cfg, Rng& rng) {
  if (cfg.input_dim == 0 || cfg.hidden == 0 || cfg.action_dim == 0) throw ConfigError("policy dimensions must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](std::size_t rows, std::size_t cols, double stddev) {
    Tensor t = Tensor::matrix(rows, cols);
    for (auto& v : t.data()) v = static_cast<float>(stddev * normal(rng));
    return t;
  };
  ParamSet p;
  if (cfg.match_map) {
    if (cfg.grid_plane == 0 || cfg.category_channels == 0 || cfg.instruction_dim == 0 ||
        cfg.category_offset + cfg.category_channels * cfg.grid_plane > cfg.input_dim ||
        cfg.instruction_offset + cfg.instruction_dim > cfg.input_dim) {
      throw ConfigError("match map layout does not fit the input features");
    }
    p["trunk.instr_proj"] = gaussian(cfg.instruction_dim, cfg.category_channels, 0.5);
  }
  const std::size_t fan_in = cfg.trunk_input_dim();
  p["trunk.w1"] = gaussian(fan_in, cfg.hidden, 1.0 / std::sqrt(double(fan_in)));
  p["trunk.b1"] = Tensor::matrix(1, cfg.hidden);
  p["trunk.w2"] = gaussian(cfg.hidden, cfg.hidden, 1.0 / std::sqrt(double(cfg.hidden)));
  p["trunk.b2"] = Tensor::matrix(1, cfg.hidden);
  p["actor.w"] = gaussian(cfg.hidden, cfg.action_dim, 0.01);
  p["actor.b"] = Tensor::matrix(1, cfg.action_dim);
  if (cfg.head == HeadKind::gaussian) {
    p["actor.log_std"] = Tensor::matrix(1, cfg.action_dim, static_cast<float>(cfg.init_log_std));
  }
  p["critic.w"] = gaussian(cfg.hidden, 1, 1.0 / std::sqrt(double(cfg.hidden)));
  p["critic.b"] = Tensor::matrix(1, 1);
  return p;
}

bool is_critic_param(const std::string& name) { return name.rfind("critic.", 0) == 0; }

// ---------------------------------------------------------------------------

ActionDist ActionDist::gaussian(std::vector<double> mean, std::vector<double> log_std) {
  if (mean.size() != log_std.size() || mean.empty()) throw DimensionError("gaussian mean/log_std size mismatch");
  ActionDist d;
  d.kind = HeadKind::gaussian;
  d.mean = std::move(mean);
  d.log_std = std::move(log_std);
  return d;
}

ActionDist ActionDist::categorical(std::vector<double> logits) {
  if (logits.empty()) throw DimensionError("categorical needs at least one class");
  ActionDist d;
  d.kind = HeadKind::categorical;
  d.logits = std::move(logits);
  return d;
}

namespace {

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

std::size_t category_index(const ActionDist& d, std::span<const double> action) {
  if (action.size() != 1) throw DimensionError("categorical action must be a single index");
  const double k = action[0];
  if (!(k >= 0.0) || k >= static_cast<double>(d.logits.size()) || k != std::floor(k)) {
    throw ContractError("categorical action index out of range");
  }
  return static_cast<std::size_t>(k);
}

}  // namespace

std::vector<double> ActionDist::probabilities() const {
  if (kind != HeadKind::categorical) throw ContractError("probabilities() on a gaussian");
  auto lp = log_softmax(logits);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

double log_prob(const ActionDist& d, std::span<const double> action) {
  if (d.kind == HeadKind::categorical) return log_softmax(d.logits)[category_index(d, action)];
  if (action.size() != d.mean.size()) throw DimensionError("action dimension mismatch");
  double lp = -0.5 * static_cast<double>(d.mean.size()) * std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < d.mean.size(); ++i) {
    const double z = (action[i] - d.mean[i]) * std::exp(-d.log_std[i]);
    lp += -0.5 * z * z - d.log_std[i];
  }
  return lp;
}

double kl(const ActionDist& p, const ActionDist& q) {
  if (p.kind != q.kind) throw ContractError("kl between different distribution families");
  if (p.dim() != q.dim()) throw DimensionError("kl between distributions of different dimension");
  if (p.kind == HeadKind::gaussian) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
      const double vp = std::exp(2.0 * p.log_std[i]);
      const double vq = std::exp(2.0 * q.log_std[i]);
      const double dm = p.mean[i] - q.mean[i];
      total += q.log_std[i] - p.log_std[i] + (vp + dm * dm) / (2.0 * vq) - 0.5;
    }
    return total;
  }
  const auto lp = log_softmax(p.logits);
  const auto lq = log_softmax(q.logits);
  double total = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double pi = std::exp(lp[i]);
    if (pi == 0.0) continue;
    if (std::exp(lq[i]) == 0.0) throw NumericError("infinite KL: q assigns zero mass where p does not");
    total += pi * (lp[i] - lq[i]);
  }
  return total;
}

double entropy(const ActionDist& d) {
  if (d.kind == HeadKind::gaussian) {
    double h = 0.0;
    for (double ls : d.log_std) h += ls + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    return h;
  }
  const auto lp = log_softmax(d.logits);
  double h = 0.0;
  for (double v : lp) {
    const double p = std::exp(v);
    if (p > 0.0) h -= p * v;
  }
  return h;
}

std::vector<double> sample(const ActionDist& d, Rng& rng) {
  if (d.kind == HeadKind::gaussian) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> a(d.mean.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = d.mean[i] + std::exp(d.log_std[i]) * n(rng);
    return a;
  }
  const auto probs = d.probabilities();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (x < acc) return {static_cast<double>(i)};
  }
  return {static_cast<double>(last)};
}

std::vector<double> mode(const ActionDist& d) {
  if (d.kind == HeadKind::gaussian) return d.mean;
  const auto it = std::max_element(d.logits.begin(), d.logits.end());
  return {static_cast<double>(std::distance(d.logits.begin(), it))};
}

PolicyEval evaluate_policy(const PolicyConfig& cfg, const ParamSet& params, const Tensor& features) {
  Tape tape;
  auto p = bind_params(tape, params, false);
  auto out = policy_forward(cfg, p, tape.constant(features));
  PolicyEval ev;
  const std::size_t n = features.rows();
  ev.dists.reserve(n);
  ev.values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ev.dists.push_back(dist_row(out.dist, i));
    ev.values.push_back(out.value.value()[i]);
  }
  return ev;
}

}  // namespace pairrl
