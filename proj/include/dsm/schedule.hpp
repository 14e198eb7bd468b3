#pragma once

#include <span>
#include <string>
#include <vector>

namespace dsm {

/// Selects the time weighting applied to the score-difference gradient.
enum class WeightKind { constant, sigma_sq, snr };

WeightKind parse_weight_kind(const std::string& name);
std::string to_string(WeightKind kind);

/// Discrete variance-preserving schedule: x_t = alpha_t x_0 + sigma_t eps,
/// with alpha_t^2 + sigma_t^2 = 1, alpha_0 = 1 and sigma_0 = 0.
class NoiseSchedule {
 public:
  /// Linear-beta VP schedule with betas linearly spaced over t = 1..T.
  static NoiseSchedule vp_linear(int num_steps, double beta_min, double beta_max,
                                 WeightKind weight_kind = WeightKind::constant);

  int num_steps() const { return static_cast<int>(alphas_.size()) - 1; }
  double alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
  double sigma(int t) const { return sigmas_.at(static_cast<std::size_t>(t)); }
  std::span<const double> alphas() const { return alphas_; }
  std::span<const double> sigmas() const { return sigmas_; }
  WeightKind weight_kind() const { return weight_kind_; }

  /// Smallest t with sigma_t >= min(target, sigma_T); 0 for target <= 0.
  int inverse_sigma(double target_sigma) const;

  /// omega(t). Throws for the snr weighting at t = 0.
  double weight(int t) const;

 private:
  NoiseSchedule(std::vector<double> alphas, std::vector<double> sigmas, WeightKind kind)
      : alphas_(std::move(alphas)), sigmas_(std::move(sigmas)), weight_kind_(kind) {}

  std::vector<double> alphas_;
  std::vector<double> sigmas_;
  WeightKind weight_kind_;
};

}  // namespace dsm
