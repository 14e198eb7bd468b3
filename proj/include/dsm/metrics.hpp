#pragma once

#include "dsm/degrade.hpp"
#include "dsm/oracle.hpp"
#include "dsm/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dsm {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE) with peak 1; identical inputs give +infinity.
double psnr(const Patch& a, const Patch& b);
/// psnr() with +infinity replaced by kPsnrCap, as written to logs.
double psnr_capped(const Patch& a, const Patch& b);

/// Mean SSIM over all window x window positions (uniform window,
/// K1 = 0.01, K2 = 0.03, peak 1).
double ssim(const Patch& a, const Patch& b, int window = 8);

/// Unbiased RBF-kernel MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 h^2)).
/// Rows are samples. Exactly symmetric in (x, y).
double mmd2(const Mat& x, const Mat& y, double bandwidth);

struct GaussianFit {
  Vec mean;
  Mat cov;
};
/// Sample mean and unbiased covariance plus 1e-6 diagonal jitter.
GaussianFit fit_gaussian(const Mat& x);

/// KL(fit || target) for the moment-matched Gaussian of the rows of x.
double fit_gaussian_kl(const Mat& x, const GaussianMixture& target);

/// Assigns each row to its most probable target component and returns
/// fit_gaussian_kl per component. Components with too few samples report
/// +infinity.
std::vector<double> fit_gaussian_kl_per_mode(const Mat& x, const GaussianMixture& target);

struct EvalReport {
  std::string task;
  long step = 0;
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> baseline_psnr;  // identity restoration (upsampled lq)
  std::optional<double> mmd2;
  std::optional<double> fit_kl;         // worst mode
  std::vector<double> fit_kl_per_mode;
  long n_samples = 0;
};

}  // namespace dsm
