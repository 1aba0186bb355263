#pragma once

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pairrl/autodiff.hpp"
#include "pairrl/tabletop.hpp"

namespace pairrl {

enum class HeadKind { gaussian, categorical };

struct PolicyConfig {
  HeadKind head = HeadKind::gaussian;
  std::size_t input_dim = 0;
  std::size_t hidden = 128;
  // Gaussian: dimension of the action vector. Categorical: number of classes.
  std::size_t action_dim = 3;
  double init_log_std = -0.5;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  // Learned instruction-conditioned match map: the instruction is projected
  // to the category-embedding space and dotted with the category channels of
  // every cell; the resulting H*W map is appended to the trunk input.
  bool match_map = true;
  std::size_t grid_plane = 0;
  std::size_t category_offset = 0;
  std::size_t category_channels = 0;
  std::size_t instruction_offset = 0;
  std::size_t instruction_dim = 0;

  std::size_t trunk_input_dim() const { return input_dim + (match_map ? grid_plane : 0); }

  static PolicyConfig for_env(const Tabletop& env, HeadKind head);
};

/// Flattened grid, then proprio, then instruction.
std::size_t feature_dim(const Tabletop& env);
void write_features(const Observation& obs, std::span<float> out);
/// Stacks observations into a [n, feature_dim] matrix.
Tensor stack_features(std::span<const Observation* const> obs);

/// Trunk: two tanh layers. Actor head: mean (+ state-independent log-std) or
/// logits. Critic head: scalar value from the shared trunk.
ParamSet init_policy(const PolicyConfig& cfg, Rng& rng);

/// Parameters trained at the critic learning rate.
bool is_critic_param(const std::string& name);

// ---------------------------------------------------------------------------
// Value-level distributions (double precision).

struct ActionDist {
  HeadKind kind = HeadKind::gaussian;
  std::vector<double> mean;
  std::vector<double> log_std;
  std::vector<double> logits;

  static ActionDist gaussian(std::vector<double> mean, std::vector<double> log_std);
  static ActionDist categorical(std::vector<double> logits);

  std::size_t dim() const { return kind == HeadKind::gaussian ? mean.size() : logits.size(); }
  std::vector<double> probabilities() const;  // categorical only
};

/// Gaussian: `action` is the vector. Categorical: `action[0]` is the index.
double log_prob(const ActionDist& dist, std::span<const double> action);
double kl(const ActionDist& p, const ActionDist& q);
double entropy(const ActionDist& dist);
std::vector<double> sample(const ActionDist& dist, Rng& rng);
/// Mean for Gaussian, argmax for categorical.
std::vector<double> mode(const ActionDist& dist);

// ---------------------------------------------------------------------------
// Tape-level network and distributions.

template <class R>
using TapeParams = std::map<std::string, BasicVar<R>>;

template <class R>
TapeParams<R> bind_params(BasicTape<R>& tape, const BasicParamSet<R>& params, bool trainable = true) {
  TapeParams<R> out;
  for (const auto& [name, t] : params) out.emplace(name, trainable ? tape.param(name, t) : tape.constant(t));
  return out;
}

/// Batched action distribution: rows are samples. For Gaussian heads
/// `log_std` is a single [1, A] row shared by every sample.
template <class R>
struct DistVars {
  HeadKind kind = HeadKind::gaussian;
  BasicVar<R> mean;
  BasicVar<R> log_std;
  BasicVar<R> logits;
};

template <class R>
struct PolicyVars {
  DistVars<R> dist;
  BasicVar<R> value;  // [B, 1]
};

namespace detail {
template <class R>
const BasicVar<R>& get(const TapeParams<R>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("missing policy parameter '" + name + "'");
  return it->second;
}

template <class R>
BasicVar<R> constant_like(BasicTape<R>& tape, double v) {
  return tape.constant(BasicTensor<R>::scalar(static_cast<R>(v)));
}
}  // namespace detail

template <class R>
PolicyVars<R> policy_forward(const PolicyConfig& cfg, const TapeParams<R>& p, BasicVar<R> features) {
  using detail::get;
  if (features.value().cols() != cfg.input_dim) {
    throw DimensionError("policy input has " + std::to_string(features.value().cols()) + " features, expected " +
                         std::to_string(cfg.input_dim));
  }
  auto input = features;
  if (cfg.match_map) {
    auto instr = slice(features, 1, cfg.instruction_offset, cfg.instruction_offset + cfg.instruction_dim);
    auto proj = matmul(instr, get(p, "trunk.instr_proj"));
    BasicVar<R> match;
    for (std::size_t k = 0; k < cfg.category_channels; ++k) {
      const std::size_t begin = cfg.category_offset + k * cfg.grid_plane;
      auto term = slice(features, 1, begin, begin + cfg.grid_plane) * slice(proj, 1, k, k + 1);
      match = k == 0 ? term : match + term;
    }
    const std::array<BasicVar<R>, 2> parts{features, match};
    input = concat(std::span<const BasicVar<R>>(parts), 1);
  }
  auto h = tanh(matmul(input, get(p, "trunk.w1")) + get(p, "trunk.b1"));
  h = tanh(matmul(h, get(p, "trunk.w2")) + get(p, "trunk.b2"));
  PolicyVars<R> out;
  out.dist.kind = cfg.head;
  auto head = matmul(h, get(p, "actor.w")) + get(p, "actor.b");
  if (cfg.head == HeadKind::gaussian) {
    out.dist.mean = head;
    out.dist.log_std = clamp(get(p, "actor.log_std"), cfg.log_std_min, cfg.log_std_max);
  } else {
    out.dist.logits = head;
  }
  out.value = matmul(h, get(p, "critic.w")) + get(p, "critic.b");
  return out;
}

/// Stops gradients through every tensor of a distribution.
template <class R>
DistVars<R> stop_grad(const DistVars<R>& d) {
  DistVars<R> out = d;
  if (d.kind == HeadKind::gaussian) {
    out.mean = stop_grad(d.mean);
    out.log_std = stop_grad(d.log_std);
  } else {
    out.logits = stop_grad(d.logits);
  }
  return out;
}

/// Per-row log density/mass, shape [B, 1]. Gaussian `actions` are [B, A];
/// categorical `actions` are one-hot [B, K].
template <class R>
BasicVar<R> log_prob(const DistVars<R>& d, BasicVar<R> actions) {
  auto& tape = actions.tape();
  if (d.kind == HeadKind::gaussian) {
    if (actions.value().cols() != d.mean.value().cols()) throw DimensionError("action dimension mismatch");
    const double a = static_cast<double>(d.mean.value().cols());
    auto z = (actions - d.mean) * exp(-d.log_std);
    auto quad = scale(sum(square(z), 1), -0.5);
    return quad - sum(d.log_std) - detail::constant_like(tape, 0.5 * a * std::log(2.0 * std::numbers::pi));
  }
  if (actions.value().cols() != d.logits.value().cols()) throw DimensionError("action dimension mismatch");
  return sum(log_softmax(d.logits) * actions, 1);
}

/// Closed-form KL(p || q) per row, shape [B, 1].
template <class R>
BasicVar<R> kl(const DistVars<R>& p, const DistVars<R>& q) {
  if (p.kind != q.kind) throw ContractError("kl between different distribution families");
  if (p.kind == HeadKind::gaussian) {
    auto& tape = p.mean.tape();
    auto diff2 = square(p.mean - q.mean);
    auto var_p = exp(scale(p.log_std, 2.0));
    auto half_inv_var_q = scale(exp(scale(q.log_std, -2.0)), 0.5);
    auto ratio = (diff2 + var_p) * half_inv_var_q;
    auto log_term = q.log_std - p.log_std - detail::constant_like(tape, 0.5);
    return sum(ratio + log_term, 1);
  }
  auto lp = log_softmax(p.logits);
  auto lq = log_softmax(q.logits);
  return sum(exp(lp) * (lp - lq), 1);
}

/// Entropy per row ([B, 1]); the Gaussian head's entropy is state independent
/// and returned as a single [1] value.
template <class R>
BasicVar<R> entropy(const DistVars<R>& d) {
  if (d.kind == HeadKind::gaussian) {
    auto& tape = d.log_std.tape();
    const double a = static_cast<double>(d.log_std.value().cols());
    return sum(d.log_std) + detail::constant_like(tape, 0.5 * a * std::log(2.0 * std::numbers::pi * std::numbers::e));
  }
  auto lp = log_softmax(d.logits);
  return -sum(exp(lp) * lp, 1);
}

/// Extracts row `row` of a batched distribution as a value-level ActionDist.
template <class R>
ActionDist dist_row(const DistVars<R>& d, std::size_t row) {
  if (d.kind == HeadKind::gaussian) {
    const auto& m = d.mean.value();
    const auto& s = d.log_std.value();
    std::vector<double> mean(m.cols()), ls(s.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) mean[j] = m.at(row, j);
    for (std::size_t j = 0; j < s.cols(); ++j) ls[j] = s.at(0, j);
    return ActionDist::gaussian(std::move(mean), std::move(ls));
  }
  const auto& l = d.logits.value();
  std::vector<double> logits(l.cols());
  for (std::size_t j = 0; j < l.cols(); ++j) logits[j] = l.at(row, j);
  return ActionDist::categorical(std::move(logits));
}

/// Actions as the tape constant expected by log_prob: raw vectors for Gaussian
/// heads, one-hot rows for categorical heads (index in column 0 of `raw`).
template <class R>
BasicTensor<R> action_tensor(HeadKind kind, std::size_t action_dim, const std::vector<std::vector<float>>& raw) {
  BasicTensor<R> t = BasicTensor<R>::matrix(raw.size(), action_dim);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (kind == HeadKind::gaussian) {
      if (raw[i].size() != action_dim) throw DimensionError("action dimension mismatch");
      for (std::size_t j = 0; j < action_dim; ++j) t.at(i, j) = static_cast<R>(raw[i][j]);
    } else {
      const auto k = static_cast<long>(raw[i].at(0));
      if (k < 0 || static_cast<std::size_t>(k) >= action_dim) throw ContractError("categorical action out of range");
      t.at(i, static_cast<std::size_t>(k)) = R(1);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Inference without gradients.

struct PolicyEval {
  std::vector<ActionDist> dists;
  std::vector<double> values;
};

PolicyEval evaluate_policy(const PolicyConfig& cfg, const ParamSet& params, const Tensor& features);

}  // namespace pairrl
