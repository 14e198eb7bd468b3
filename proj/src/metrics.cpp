#include "dsm/metrics.hpp"

#include "dsm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dsm {

namespace {

void require_same(const Patch& a, const Patch& b) {
  require_dims(a.height == b.height && a.width == b.width, "patch dimensions differ");
}

bool lexicographically_less(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) return a.rows() < b.rows();
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

double psnr(const Patch& a, const Patch& b) {
  require_same(a, b);
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.pixels[i] - b.pixels[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double psnr_capped(const Patch& a, const Patch& b) { return std::min(psnr(a, b), kPsnrCap); }

double ssim(const Patch& a, const Patch& b, int window) {
  require_same(a, b);
  if (window < 1 || a.height < window || a.width < window) {
    throw DimensionMismatch("patch smaller than the SSIM window");
  }
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  const int H = a.height, W = a.width;
  // Summed-area tables of a, b, a^2, b^2, ab.
  const auto idx = [W](int r, int c) { return static_cast<std::size_t>(r * (W + 1) + c); };
  std::vector<double> sa((H + 1) * (W + 1), 0.0), sb(sa), saa(sa), sbb(sa), sab(sa);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double x = a.at(r, c), y = b.at(r, c);
      auto acc = [&](std::vector<double>& t, double v) {
        t[idx(r + 1, c + 1)] = v + t[idx(r, c + 1)] + t[idx(r + 1, c)] - t[idx(r, c)];
      };
      acc(sa, x);
      acc(sb, y);
      acc(saa, x * x);
      acc(sbb, y * y);
      acc(sab, x * y);
    }
  }
  const double n = static_cast<double>(window * window);
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + window <= H; ++r) {
    for (int c = 0; c + window <= W; ++c) {
      auto box = [&](const std::vector<double>& t) {
        return t[idx(r + window, c + window)] - t[idx(r, c + window)] - t[idx(r + window, c)] +
               t[idx(r, c)];
      };
      const double mx = box(sa) / n, my = box(sb) / n;
      const double vx = box(saa) / n - mx * mx;
      const double vy = box(sbb) / n - my * my;
      const double cxy = box(sab) / n - mx * my;
      total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

double mmd2(const Mat& x, const Mat& y, double bandwidth) {
  require_dims(x.cols() == y.cols(), "mmd2 sample dimensions differ");
  if (x.rows() < 2 || y.rows() < 2) throw std::invalid_argument("mmd2 needs >= 2 samples per set");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("mmd2 bandwidth must be positive");
  // Canonical argument order makes the cross term, and hence the result,
  // bit-identical under swapping.
  const bool swap = lexicographically_less(y, x);
  const Mat& a = swap ? y : x;
  const Mat& b = swap ? x : y;
  const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
  const auto na = static_cast<std::size_t>(a.rows());
  const auto nb = static_cast<std::size_t>(b.rows());
  const auto d = static_cast<std::size_t>(a.cols());
  const std::span<const double> sa(a.data(), na * d), sb(b.data(), nb * d);
  const double kaa = kernels::rbf_pair_sum(sa, na, sa, na, d, gamma, true);
  const double kbb = kernels::rbf_pair_sum(sb, nb, sb, nb, d, gamma, true);
  const double kab = kernels::rbf_pair_sum(sa, na, sb, nb, d, gamma, false);
  const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
  const double xx = kaa / (fa * (fa - 1.0));
  const double yy = kbb / (fb * (fb - 1.0));
  return xx + yy - 2.0 * kab / (fa * fb);
}

GaussianFit fit_gaussian(const Mat& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw std::invalid_argument("need at least 2 samples to fit a Gaussian");
  GaussianFit f;
  f.mean = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - f.mean.transpose();
  f.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  f.cov += 1e-6 * Mat::Identity(x.cols(), x.cols());
  return f;
}

double fit_gaussian_kl(const Mat& x, const GaussianMixture& target) {
  if (target.num_components() != 1) throw std::invalid_argument("target must be a single Gaussian");
  require_dims(x.cols() == target.dim(), "sample dimension does not match target");
  if (x.rows() <= x.cols() + 1) throw std::invalid_argument("need more than D + 1 samples");
  const GaussianFit f = fit_gaussian(x);
  Eigen::LLT<Mat> llt(f.cov);
  if (llt.info() != Eigen::Success) throw std::runtime_error("singular Gaussian fit");
  return gaussian_kl(GaussianMixture::single(f.mean, f.cov), target);
}

std::vector<double> fit_gaussian_kl_per_mode(const Mat& x, const GaussianMixture& target) {
  const int k = target.num_components();
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(k));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Vec resp = target.responsibilities(x.row(r).transpose());
    Eigen::Index best;
    resp.maxCoeff(&best);
    members[static_cast<std::size_t>(best)].push_back(r);
  }
  std::vector<double> out;
  for (int i = 0; i < k; ++i) {
    const auto& m = members[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(m.size()) <= x.cols() + 1) {
      out.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    Mat sub(static_cast<Eigen::Index>(m.size()), x.cols());
    for (std::size_t j = 0; j < m.size(); ++j) sub.row(static_cast<Eigen::Index>(j)) = x.row(m[j]);
    out.push_back(fit_gaussian_kl(sub, target.component(i)));
  }
  return out;
}

}  // namespace dsm
