#include "dsm/optim.hpp"

#include <cmath>

namespace dsm {

void adamw_step(ParamVector& params, const ParamVector& grad, AdamState& state,
                const AdamConfig& cfg) {
  require_dims(grad.size() == params.size(), "gradient size does not match parameters");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.steps = 0;
  }
  ++state.steps;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.steps));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.steps));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] = params[i] * decay - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace dsm
