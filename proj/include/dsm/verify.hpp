#pragma once

#include "dsm/config.hpp"
#include "dsm/nets.hpp"
#include "dsm/schedule.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dsm {

/// Smallest t whose alpha_t is closest to the requested value.
int timestep_for_alpha(const NoiseSchedule& s, double alpha);

/// 1-D check: p0 = N(0, 1), G(z) = z + mu with z ~ N(0, 1), analytic teacher and
/// fake residuals. The exact gradient of KL(q_t || p_t) in mu is alpha_t^2 mu.
struct ShiftCheck {
  int t = 0;
  double alpha_t = 0.0;
  double mu = 0.0;
  double expected = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  bool pass = false;
};
ShiftCheck verify_shift_gradient(const NoiseSchedule& s, long samples, std::uint64_t seed,
                                 double alpha = 0.8, double mu = 0.5);

/// Affine generator G(z) = A z + b against a non-isotropic Gaussian target:
/// Monte-Carlo estimator mean versus central differences of the closed-form
/// KL(q_t || p_t) over every generator parameter.
struct AffineCheck {
  int t = 0;
  std::vector<double> estimate;
  std::vector<double> finite_diff;
  double cosine = 0.0;
  bool pass = false;
};
AffineCheck verify_affine_gradient(const NoiseSchedule& s, int t, long samples, std::uint64_t seed);

struct ScoreGradientReport {
  long samples = 0;
  std::uint64_t seed = 0;
  ShiftCheck shift;
  AffineCheck affine;
  bool pass = false;
};
ScoreGradientReport verify_score_gradient(const NoiseSchedule& s, long samples, std::uint64_t seed);
json score_gradient_to_json(const ScoreGradientReport& r);

struct NetCheck {
  std::string name;
  NetSpec spec;
  GradcheckReport report;
};
/// Gradient check of the generator and denoiser architectures of a config at
/// seeded random parameters and inputs.
std::vector<NetCheck> gradcheck_networks(const ExperimentConfig& cfg, std::uint64_t seed,
                                         double tolerance = 1e-4);

}  // namespace dsm
