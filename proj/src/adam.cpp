#include "adam.hpp"

#include <cmath>

#include "errors.hpp"

namespace dagkt::ad {

AdamState::AdamState(std::span<Parameter* const> params, AdamConfig cfg) : config(cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("Adam learning rate must be positive");
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto* p : params) {
    first_moment.emplace_back(p->value.shape);
    second_moment.emplace_back(p->value.shape);
  }
}

void adam_step(std::span<Parameter* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                     std::to_string(state.first_moment.size()));
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.first_moment[k].values;
    auto& v = state.second_moment[k].values;
    if (p.grad.shape != p.value.shape || state.first_moment[k].shape != p.value.shape) {
      throw ShapeError("adam_step: parameter '" + p.name + "' of shape " + to_string(p.value.shape) +
                       " does not match its gradient or moments");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = p.grad.values[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p.value.values[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.values) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (auto* p : params)
      for (double& g : p->grad.values) g *= factor;
  }
  return norm;
}

}  // namespace dagkt::ad
