#pragma once

#include "dsm/nets.hpp"

namespace dsm {

/// Adam with decoupled weight decay.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long steps = 0;
};

void adamw_step(ParamVector& params, const ParamVector& grad, AdamState& state,
                const AdamConfig& cfg);

}  // namespace dsm
