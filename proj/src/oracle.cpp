#include "dsm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace dsm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

bool is_diagonal(const Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (i != j && m(i, j) != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<Vec> means,
                                 std::vector<Mat> covs)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
  if (weights_.empty()) throw std::invalid_argument("mixture needs at least one component");
  if (means_.size() != weights_.size() || covs_.size() != weights_.size()) {
    throw std::invalid_argument("mixture weights, means and covariances differ in count");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
  const Eigen::Index d = means_.front().size();
  if (d < 1) throw std::invalid_argument("mixture dimension must be positive");
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const Mat& c = covs_[i];
    if (means_[i].size() != d || c.rows() != d || c.cols() != d) {
      throw DimensionMismatch("mixture component dimensions disagree");
    }
    if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw std::invalid_argument("covariance must be symmetric");
    }
    Eigen::LLT<Mat> llt(c);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("covariance is not positive definite");
    }
    Mat L = llt.matrixL();
    if ((L.diagonal().array() <= 0.0).any()) {
      throw std::invalid_argument("covariance is not positive definite");
    }
    log_det_.push_back(2.0 * L.diagonal().array().log().sum());
    chol_.push_back(std::move(L));
    diag_.push_back(is_diagonal(c));
  }
}

GaussianMixture GaussianMixture::single(const Vec& mean, const Mat& cov) {
  return GaussianMixture({1.0}, {mean}, {cov});
}

GaussianMixture GaussianMixture::diagonal(std::vector<double> weights, std::vector<Vec> means,
                                          std::vector<Vec> variances) {
  std::vector<Mat> covs;
  for (const Vec& v : variances) covs.push_back(v.asDiagonal().toDenseMatrix());
  return GaussianMixture(std::move(weights), std::move(means), std::move(covs));
}

GaussianMixture GaussianMixture::component(int i) const {
  return single(mean(i), cov(i));
}

double GaussianMixture::component_log_density(std::size_t i, const Vec& x) const {
  const Vec diff = x - means_[i];
  double maha;
  if (diag_[i]) {
    maha = (diff.array().square() / covs_[i].diagonal().array()).sum();
  } else {
    const Vec z = chol_[i].triangularView<Eigen::Lower>().solve(diff);
    maha = z.squaredNorm();
  }
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det_[i] + maha);
}

Vec GaussianMixture::component_score(std::size_t i, const Vec& x) const {
  const Vec diff = x - means_[i];
  if (diag_[i]) return -(diff.array() / covs_[i].diagonal().array()).matrix();
  const Vec z = chol_[i].triangularView<Eigen::Lower>().solve(diff);
  return -chol_[i].transpose().triangularView<Eigen::Upper>().solve(z);
}

Vec GaussianMixture::responsibilities(const Vec& x) const {
  require_dims(x.size() == dim(), "point dimension does not match mixture");
  const std::size_t k = weights_.size();
  Vec logw(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    logw[static_cast<Eigen::Index>(i)] =
        weights_[i] > 0.0 ? std::log(weights_[i]) + component_log_density(i, x)
                          : -std::numeric_limits<double>::infinity();
  }
  const double m = logw.maxCoeff();
  Vec r = (logw.array() - m).exp();
  return r / r.sum();
}

double GaussianMixture::log_density(const Vec& x) const {
  require_dims(x.size() == dim(), "point dimension does not match mixture");
  std::vector<double> terms;
  terms.reserve(weights_.size());
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i] > 0.0) terms.push_back(std::log(weights_[i]) + component_log_density(i, x));
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double v : terms) s += std::exp(v - m);
  return m + std::log(s);
}

Vec GaussianMixture::score(const Vec& x) const {
  const Vec r = responsibilities(x);
  Vec s = Vec::Zero(x.size());
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    const double ri = r[static_cast<Eigen::Index>(i)];
    if (ri > 0.0) s += ri * component_score(i, x);
  }
  return s;
}

Mat GaussianMixture::sample(int n, Engine& eng) const {
  std::vector<int> components;
  return sample(n, eng, components);
}

Mat GaussianMixture::sample(int n, Engine& eng, std::vector<int>& components) const {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  std::vector<double> cdf(weights_.size());
  std::partial_sum(weights_.begin(), weights_.end(), cdf.begin());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  const Eigen::Index d = dim();
  Mat out(n, d);
  Vec z(d);
  components.assign(static_cast<std::size_t>(n), 0);
  for (int r = 0; r < n; ++r) {
    const double u = u01(eng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t k = static_cast<std::size_t>(it - cdf.begin());
    if (k >= weights_.size()) k = weights_.size() - 1;
    while (weights_[k] == 0.0 && k > 0) --k;
    components[static_cast<std::size_t>(r)] = static_cast<int>(k);
    for (Eigen::Index j = 0; j < d; ++j) z[j] = n01(eng);
    out.row(r) = (means_[k] + chol_[k] * z).transpose();
  }
  return out;
}

Mat GaussianMixture::sample(int n, std::uint64_t seed) const {
  Engine eng(seed);
  return sample(n, eng);
}

bool GaussianMixture::operator==(const GaussianMixture& o) const {
  if (weights_ != o.weights_ || means_.size() != o.means_.size()) return false;
  for (std::size_t i = 0; i < means_.size(); ++i) {
    if (means_[i] != o.means_[i] || covs_[i] != o.covs_[i]) return false;
  }
  return true;
}

GaussianMixture diffuse(const GaussianMixture& gm, const NoiseSchedule& s, int t) {
  if (t < 0 || t > s.num_steps()) throw std::out_of_range("timestep out of range");
  const double a = s.alpha(t);
  const double sg = s.sigma(t);
  std::vector<Vec> means;
  std::vector<Mat> covs;
  const Eigen::Index d = gm.dim();
  for (int i = 0; i < gm.num_components(); ++i) {
    means.push_back(a * gm.mean(i));
    covs.push_back(a * a * gm.cov(i) + sg * sg * Mat::Identity(d, d));
  }
  return GaussianMixture(gm.weights(), std::move(means), std::move(covs));
}

double gaussian_kl(const GaussianMixture& p, const GaussianMixture& q) {
  if (p.num_components() != 1 || q.num_components() != 1) {
    throw std::invalid_argument("gaussian_kl needs single-component Gaussians");
  }
  require_dims(p.dim() == q.dim(), "gaussian_kl dimension mismatch");
  const Mat& sp = p.cov(0);
  const Mat& sq = q.cov(0);
  Eigen::LLT<Mat> lq(sq);
  Eigen::LLT<Mat> lp(sp);
  const Vec diff = q.mean(0) - p.mean(0);
  const double trace = lq.solve(sp).trace();
  const double maha = diff.dot(lq.solve(diff));
  const Mat Lq = lq.matrixL();
  const Mat Lp = lp.matrixL();
  const double logdet_q = 2.0 * Lq.diagonal().array().log().sum();
  const double logdet_p = 2.0 * Lp.diagonal().array().log().sum();
  const double kl = 0.5 * (trace + maha - static_cast<double>(p.dim()) + logdet_q - logdet_p);
  return std::max(kl, 0.0);
}

}  // namespace dsm
