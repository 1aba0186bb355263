#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pairrl/tensor.hpp"

namespace pairrl {

/// Adam optimizer state. Moments are created lazily on the first step and
/// keyed by parameter name.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Per-parameter learning rates; parameters not listed use `lr`.
  std::map<std::string, double> lr_by_param;

  std::uint64_t step = 0;
  ParamSet first_moment;
  ParamSet second_moment;

  double lr_for(const std::string& name) const {
    auto it = lr_by_param.find(name);
    return it == lr_by_param.end() ? lr : it->second;
  }
};

/// One bias-corrected Adam update of `params` in place. `step` must exceed the
/// state's current counter; every gradient must match its parameter's shape.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, std::uint64_t step);

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
double clip_grad_norm(ParamSet& grads, double max_norm);

}  // namespace pairrl
