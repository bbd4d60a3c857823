#include "svae/ad/adam.hpp"

#include <cmath>

#include "svae/errors.hpp"

namespace svae::ad {

void adam_step(ParamStore& params, AdamState& state) {
  for (auto& [name, t] : params.entries()) {
    if (t.requires_grad() && !t.has_grad()) {
      throw UsageError("adam_step: parameter '" + name + "' has no gradient");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);

  for (auto& [name, param] : params.entries()) {
    if (!param.requires_grad()) continue;
    auto& m = state.moments[name];
    if (m.first.size() != param.numel()) {
      m.first.assign(param.numel(), 0.0);
      m.second.assign(param.numel(), 0.0);
    }
    auto values = param.mutable_values();
    auto grad = param.mutable_grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m.first[i] = state.beta1 * m.first[i] + (1.0 - state.beta1) * grad[i];
      m.second[i] = state.beta2 * m.second[i] + (1.0 - state.beta2) * grad[i] * grad[i];
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      values[i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
      grad[i] = 0.0;
    }
  }
}

}  // namespace svae::ad
