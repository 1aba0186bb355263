#include "pairrl/adam.hpp"

#include <cmath>

#include "pairrl/errors.hpp"

namespace pairrl {

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, std::uint64_t step) {
  if (step <= state.step) {
    throw ContractError("adam step counter must increase (state at " + std::to_string(state.step) +
                        ", got " + std::to_string(step) + ")");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw DimensionError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match parameter '" + name +
                           "' " + shape_str(it->second.shape()));
    }
    if (state.lr_for(name) <= 0.0) throw ContractError("learning rate must be positive");
  }

  state.step = step;
  const double t = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, g.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, g.shape());
    auto& m = m_it->second;
    auto& v = v_it->second;
    const double lr = state.lr_for(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      p[i] = static_cast<float>(p[i] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (auto v : g.data()) sq += double(v) * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (auto& [name, g] : grads)
      for (auto& v : g.data()) v = static_cast<float>(v * s);
  }
  return norm;
}

}  // namespace pairrl
