#include "dsm/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dsm;

namespace {

GaussianMixture three_component() {
  Vec m0(2), m1(2), m2(2);
  m0 << -1.0, 0.5;
  m1 << 0.8, -0.3;
  m2 << 0.1, 1.2;
  Mat c0(2, 2), c1(2, 2), c2(2, 2);
  c0 << 0.5, 0.1, 0.1, 0.3;
  c1 << 0.2, -0.05, -0.05, 0.4;
  c2 << 0.3, 0.0, 0.0, 0.1;
  return GaussianMixture({0.2, 0.5, 0.3}, {m0, m1, m2}, {c0, c1, c2});
}

// Naive mixture density of a 2-D mixture in extended precision.
long double density_oracle(const GaussianMixture& gm, const Vec& x) {
  long double total = 0.0L;
  for (int i = 0; i < gm.num_components(); ++i) {
    const Mat& c = gm.cov(i);
    const long double a = c(0, 0), b = c(0, 1), d = c(1, 1);
    const long double det = a * d - b * b;
    const long double dx = x[0] - gm.mean(i)[0], dy = x[1] - gm.mean(i)[1];
    const long double q = (d * dx * dx - 2 * b * dx * dy + a * dy * dy) / det;
    total += gm.weight(i) * std::exp(-0.5L * q) / (2.0L * std::numbers::pi_v<long double> * std::sqrt(det));
  }
  return total;
}

}  // namespace

TEST_CASE("construction invariants") {
  const Mat I = Mat::Identity(2, 2);
  CHECK_THROWS_AS(GaussianMixture({0.5, 0.6}, {Vec::Zero(2), Vec::Zero(2)}, {I, I}), std::invalid_argument);
  CHECK_THROWS_AS(GaussianMixture({1.2, -0.2}, {Vec::Zero(2), Vec::Zero(2)}, {I, I}), std::invalid_argument);
  Mat asym(2, 2);
  asym << 1.0, 0.2, 0.0, 1.0;
  CHECK_THROWS_AS(GaussianMixture::single(Vec::Zero(2), asym), std::invalid_argument);
  Mat npd(2, 2);
  npd << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(GaussianMixture::single(Vec::Zero(2), npd), std::invalid_argument);
}

TEST_CASE("log_density") {
  const auto n01 = GaussianMixture::single(Vec::Zero(1), Mat::Identity(1, 1));
  CHECK(n01.log_density(Vec::Zero(1)) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));

  Vec mu(2);
  mu << 0.3, -0.4;
  Mat c(2, 2);
  c << 0.4, 0.1, 0.1, 0.2;
  const auto one = GaussianMixture::single(mu, c);
  const GaussianMixture twin({0.5, 0.5}, {mu, mu}, {c, c});
  Vec x(2);
  x << 1.0, 2.0;
  CHECK(twin.log_density(x) == doctest::Approx(one.log_density(x)).epsilon(1e-14));

  const auto gm = three_component();
  Engine eng(21);
  for (int i = 0; i < 200; ++i) {
    const Vec p = 1.5 * normal_vector(2, eng);
    CHECK(gm.log_density(p) == doctest::Approx(double(std::log(density_oracle(gm, p)))).epsilon(1e-12));
  }
  // Far tail stays finite where the naive density underflows.
  Vec far(2);
  far << 60.0, -80.0;
  CHECK(std::isfinite(gm.log_density(far)));
  CHECK(gm.score(far).allFinite());
}

TEST_CASE("score") {
  const auto n = GaussianMixture::single(Vec::Zero(2), Mat::Identity(2, 2));
  Vec x(2);
  x << 1.0, -2.0;
  const Vec s = n.score(x);
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 2.0);

  Vec mu(2);
  mu << 0.4, 0.9;
  Mat c(2, 2);
  c << 0.3, 0.1, 0.1, 0.6;
  CHECK(GaussianMixture::single(mu, c).score(mu).norm() == 0.0);

  const auto gm = three_component();
  Engine eng(22);
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec p = 1.5 * normal_vector(2, eng);
    const Vec g = gm.score(p);
    for (int k = 0; k < 2; ++k) {
      Vec a = p, b = p;
      a[k] += h;
      b[k] -= h;
      const double fd = (gm.log_density(a) - gm.log_density(b)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-3}));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("diffuse") {
  const auto s = NoiseSchedule::vp_linear(1000, 1e-4, 0.02);
  const auto gm = three_component();
  CHECK(diffuse(gm, s, 0) == gm);

  const auto n = GaussianMixture::single(Vec::Zero(2), Mat::Identity(2, 2));
  for (int t : {1, 300, 1000}) {
    const auto d = diffuse(n, s, t);
    CHECK((d.cov(0) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(d.mean(0).norm() == 0.0);
  }

  SUBCASE("Monte-Carlo moments of x_t") {
    Vec m0(2), m1(2);
    m0 << -1.0, 0.5;
    m1 << 1.5, -0.5;
    Mat c0(2, 2), c1(2, 2);
    c0 << 0.3, 0.1, 0.1, 0.2;
    c1 << 0.1, 0.0, 0.0, 0.4;
    const GaussianMixture two({0.3, 0.7}, {m0, m1}, {c0, c1});
    const int t = 500;
    const auto d = diffuse(two, s, t);
    constexpr int n_mc = 1000000;
    Engine eng(23);
    const Mat x0 = two.sample(n_mc, eng);
    Mat eps(n_mc, 2);
    fill_normal(eps, eng);
    const Mat xt = s.alpha(t) * x0 + s.sigma(t) * eps;

    Vec mean = Vec::Zero(2);
    Mat cov = Mat::Zero(2, 2);
    for (int i = 0; i < 2; ++i) {
      mean += d.weight(i) * d.mean(i);
      cov += d.weight(i) * (d.cov(i) + d.mean(i) * d.mean(i).transpose());
    }
    cov -= mean * mean.transpose();

    const Vec emp_mean = xt.colwise().mean().transpose();
    const Mat centered = xt.rowwise() - emp_mean.transpose();
    for (int k = 0; k < 2; ++k) {
      const double se = std::sqrt(cov(k, k) / n_mc);
      CHECK(std::abs(emp_mean[k] - mean[k]) < 3.0 * se);
      const Eigen::ArrayXd sq = centered.col(k).array().square();
      const double emp_var = sq.mean();
      const double se_var = std::sqrt((sq - emp_var).square().mean() / n_mc);
      CHECK(std::abs(emp_var - cov(k, k)) < 3.0 * se_var);
    }
  }

  SUBCASE("equal data distributions stay equal under diffusion") {
    const auto q = three_component();
    Engine eng(24);
    for (int t : {1, 17, 400, 1000}) {
      const auto dp = diffuse(gm, s, t), dq = diffuse(q, s, t);
      CHECK(dp == dq);
      const Vec x = normal_vector(2, eng);
      CHECK((dp.score(x) - dq.score(x)).norm() == 0.0);
    }
  }

  SUBCASE("component permutation commutes") {
    const GaussianMixture perm({gm.weight(2), gm.weight(0), gm.weight(1)}, {gm.mean(2), gm.mean(0), gm.mean(1)},
                               {gm.cov(2), gm.cov(0), gm.cov(1)});
    const auto a = diffuse(gm, s, 250), b = diffuse(perm, s, 250);
    Vec x(2);
    x << 0.2, -0.7;
    CHECK(a.log_density(x) == doctest::Approx(b.log_density(x)).epsilon(1e-14));
  }
}

TEST_CASE("sample") {
  const auto gm = three_component();
  CHECK(gm.sample(50, 99) == gm.sample(50, 99));

  const auto n = GaussianMixture::single(Vec::Zero(3), Mat::Identity(3, 3));
  constexpr int N = 1000000;
  const Mat x = n.sample(N, 5);
  const Vec m = x.colwise().mean();
  for (int k = 0; k < 3; ++k) CHECK(std::abs(m[k]) < 4.0 / std::sqrt(double(N)));

  Vec a(1), b(1);
  a << -5.0;
  b << 5.0;
  const Mat one = Mat::Identity(1, 1);
  const GaussianMixture lopsided({1.0, 0.0}, {a, b}, {one, one});
  Engine eng(6);
  std::vector<int> comp;
  lopsided.sample(2000, eng, comp);
  for (int c : comp) REQUIRE(c == 0);
}

TEST_CASE("gaussian_kl") {
  const auto n01 = GaussianMixture::single(Vec::Zero(1), Mat::Identity(1, 1));
  const auto n11 = GaussianMixture::single(Vec::Ones(1), Mat::Identity(1, 1));
  CHECK(gaussian_kl(n01, n01) == 0.0);
  CHECK(gaussian_kl(n11, n01) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK_THROWS_AS(gaussian_kl(three_component(), n01), std::invalid_argument);

  SUBCASE("Monte-Carlo estimate of E_p[log p - log q]") {
    Vec mp(2), mq(2);
    mp << 0.3, -0.2;
    mq << -0.1, 0.4;
    Mat cp(2, 2), cq(2, 2);
    cp << 0.6, 0.2, 0.2, 0.5;
    cq << 1.0, -0.1, -0.1, 0.8;
    const auto p = GaussianMixture::single(mp, cp), q = GaussianMixture::single(mq, cq);
    constexpr int N = 1000000;
    const Mat x = p.sample(N, 31);
    Eigen::ArrayXd diff(N);
    for (int i = 0; i < N; ++i) {
      const Vec xi = x.row(i).transpose();
      diff[i] = p.log_density(xi) - q.log_density(xi);
    }
    const double est = diff.mean();
    const double se = std::sqrt((diff - est).square().sum() / (N - 1) / N);
    CHECK(gaussian_kl(p, q) > 0.0);
    CHECK(std::abs(est - gaussian_kl(p, q)) < 3.0 * se);
  }
}
