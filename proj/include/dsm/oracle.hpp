#pragma once

#include "dsm/rng.hpp"
#include "dsm/schedule.hpp"
#include "dsm/types.hpp"

#include <vector>

namespace dsm {

/// Finite Gaussian mixture with exact density, score and sampling. Diagonal
/// covariances are detected and take a cheaper path.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covs);

  static GaussianMixture single(const Vec& mean, const Mat& cov);
  static GaussianMixture diagonal(std::vector<double> weights, std::vector<Vec> means,
                                  std::vector<Vec> variances);

  int dim() const { return static_cast<int>(means_.front().size()); }
  int num_components() const { return static_cast<int>(weights_.size()); }
  double weight(int i) const { return weights_[static_cast<std::size_t>(i)]; }
  const Vec& mean(int i) const { return means_[static_cast<std::size_t>(i)]; }
  const Mat& cov(int i) const { return covs_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& weights() const { return weights_; }

  GaussianMixture component(int i) const;

  double log_density(const Vec& x) const;
  /// grad_x log p(x).
  Vec score(const Vec& x) const;
  /// Posterior component probabilities at x.
  Vec responsibilities(const Vec& x) const;

  Mat sample(int n, Engine& eng) const;
  Mat sample(int n, std::uint64_t seed) const;
  /// Draws as sample() and also reports the component of each row.
  Mat sample(int n, Engine& eng, std::vector<int>& components) const;

  bool operator==(const GaussianMixture& o) const;

 private:
  double component_log_density(std::size_t i, const Vec& x) const;
  Vec component_score(std::size_t i, const Vec& x) const;

  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Mat> chol_;  // lower factor L with cov = L L^T
  std::vector<double> log_det_;
  std::vector<bool> diag_;
};

/// Marginal of x_t = alpha_t x_0 + sigma_t eps for x_0 ~ gm.
GaussianMixture diffuse(const GaussianMixture& gm, const NoiseSchedule& s, int t);

/// KL(p || q) for single Gaussians.
double gaussian_kl(const GaussianMixture& p, const GaussianMixture& q);

}  // namespace dsm
