#include "dsm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsm {

WeightKind parse_weight_kind(const std::string& name) {
  if (name == "constant") return WeightKind::constant;
  if (name == "sigma_sq") return WeightKind::sigma_sq;
  if (name == "snr") return WeightKind::snr;
  throw std::invalid_argument("unknown weight kind '" + name + "'");
}

std::string to_string(WeightKind kind) {
  switch (kind) {
    case WeightKind::constant: return "constant";
    case WeightKind::sigma_sq: return "sigma_sq";
    case WeightKind::snr: return "snr";
  }
  return "constant";
}

NoiseSchedule NoiseSchedule::vp_linear(int num_steps, double beta_min, double beta_max,
                                       WeightKind weight_kind) {
  if (num_steps < 2) throw std::invalid_argument("schedule needs at least 2 steps");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw std::invalid_argument("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  const auto n = static_cast<std::size_t>(num_steps);
  std::vector<double> alphas(n + 1), sigmas(n + 1);
  alphas[0] = 1.0;
  sigmas[0] = 0.0;
  double alpha_bar = 1.0;
  for (std::size_t t = 1; t <= n; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(n - 1);
    const double beta = beta_min + (beta_max - beta_min) * frac;
    alpha_bar *= 1.0 - beta;
    alphas[t] = std::sqrt(alpha_bar);
    sigmas[t] = std::sqrt(1.0 - alpha_bar);
  }
  return NoiseSchedule(std::move(alphas), std::move(sigmas), weight_kind);
}

int NoiseSchedule::inverse_sigma(double target_sigma) const {
  if (!(target_sigma > 0.0)) return 0;
  const int T = num_steps();
  if (target_sigma >= sigmas_.back()) return T;
  auto it = std::lower_bound(sigmas_.begin(), sigmas_.end(), target_sigma);
  return static_cast<int>(it - sigmas_.begin());
}

double NoiseSchedule::weight(int t) const {
  if (t < 0 || t > num_steps()) throw std::out_of_range("timestep out of range");
  switch (weight_kind_) {
    case WeightKind::constant: return 1.0;
    case WeightKind::sigma_sq: return sigma(t) * sigma(t);
    case WeightKind::snr:
      if (t == 0) throw std::invalid_argument("snr weight undefined at t = 0");
      return alpha(t) / sigma(t);
  }
  return 1.0;
}

}  // namespace dsm
