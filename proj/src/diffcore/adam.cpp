#include "augmorph/diffcore/adam.hpp"

#include <cmath>
#include <string>

namespace augmorph::diffcore {

void adam_update(Tensor& params, const Tensor& grads, AdamState& state, std::string_view param_name) {
  if (params.shape != grads.shape || params.shape != state.first_moment.shape) {
    throw ShapeError("adam_update: shape mismatch for " + std::string(param_name) + ": params " +
                     to_string(params.shape) + ", grads " + to_string(grads.shape));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads.data[i])) {
      throw NumericError("adam_update: non-finite gradient in " + std::string(param_name) + " at element " +
                         std::to_string(i));
    }
  }
  const auto& cfg = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double corr1 = 1.0 - std::pow(cfg.beta1, t);
  const double corr2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads.data[i];
    const double m = cfg.beta1 * state.first_moment.data[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.second_moment.data[i] + (1.0 - cfg.beta2) * g * g;
    state.first_moment.data[i] = static_cast<float>(m);
    state.second_moment.data[i] = static_cast<float>(v);
    const double m_hat = m / corr1;
    const double v_hat = v / corr2;
    params.data[i] = static_cast<float>(params.data[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

}  // namespace augmorph::diffcore
