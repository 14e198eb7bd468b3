#include "dsm/kernels.hpp"
#include "dsm/metrics.hpp"
#include "dsm/nets.hpp"

#include <doctest.h>

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace dsm;
namespace k = dsm::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Engine eng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(eng);
  return v;
}

void with_threads(int n, auto&& fn) {
#ifdef _OPENMP
  const int saved = omp_get_max_threads();
  omp_set_num_threads(n);
  fn();
  omp_set_num_threads(saved);
#else
  (void)n;
  fn();
#endif
}

}  // namespace

TEST_CASE("dense forward matches a naive loop") {
  const k::DenseDims d{5, 4, 3};
  const auto w = random_values(12, 1), b = random_values(3, 2), x = random_values(20, 3);
  std::vector<double> y(15);
  k::serial::dense_forward(w, b, x, d, y);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t o = 0; o < 3; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < 4; ++i) acc += w[o * 4 + i] * x[r * 4 + i];
      CHECK(y[r * 3 + o] == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("dense backward matches naive loops") {
  const k::DenseDims d{6, 3, 2};
  const auto w = random_values(6, 4), delta = random_values(12, 5), x = random_values(18, 6);
  std::vector<double> dw(6), db(2), dx(18);
  k::serial::dense_backward_params(delta, x, d, dw, db);
  k::serial::dense_backward_input(w, delta, d, dx);
  for (std::size_t o = 0; o < 2; ++o) {
    double s = 0.0;
    for (std::size_t r = 0; r < 6; ++r) s += delta[r * 2 + o];
    CHECK(db[o] == doctest::Approx(s).epsilon(1e-14));
    for (std::size_t i = 0; i < 3; ++i) {
      double g = 0.0;
      for (std::size_t r = 0; r < 6; ++r) g += delta[r * 2 + o] * x[r * 3 + i];
      CHECK(dw[o * 3 + i] == doctest::Approx(g).epsilon(1e-14));
    }
  }
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t i = 0; i < 3; ++i) {
      double g = 0.0;
      for (std::size_t o = 0; o < 2; ++o) g += delta[r * 2 + o] * w[o * 3 + i];
      CHECK(dx[r * 3 + i] == doctest::Approx(g).epsilon(1e-14));
    }
  }
}

TEST_CASE("parallel kernels are bit-identical to serial for any thread count") {
  // Large enough to take the threaded path.
  const k::DenseDims d{256, 96, 80};
  const auto w = random_values(d.in * d.out, 7), b = random_values(d.out, 8);
  const auto x = random_values(d.rows * d.in, 9), delta = random_values(d.rows * d.out, 10);

  std::vector<double> ys(d.rows * d.out), dws(d.in * d.out), dbs(d.out), dxs(d.rows * d.in);
  k::serial::dense_forward(w, b, x, d, ys);
  k::serial::dense_backward_params(delta, x, d, dws, dbs);
  k::serial::dense_backward_input(w, delta, d, dxs);
  const auto pts = random_values(600 * 3, 11), qts = random_values(500 * 3, 12);
  const double same = k::serial::rbf_pair_sum(pts, 600, pts, 600, 3, 0.7, true);
  const double cross = k::serial::rbf_pair_sum(pts, 600, qts, 500, 3, 0.7, false);

  for (int threads : {1, 2, 3, 8}) {
    with_threads(threads, [&] {
      std::vector<double> y(ys.size()), dw(dws.size()), db(dbs.size()), dx(dxs.size());
      k::parallel::dense_forward(w, b, x, d, y);
      k::parallel::dense_backward_params(delta, x, d, dw, db);
      k::parallel::dense_backward_input(w, delta, d, dx);
      CHECK(y == ys);
      CHECK(dw == dws);
      CHECK(db == dbs);
      CHECK(dx == dxs);
      CHECK(k::parallel::rbf_pair_sum(pts, 600, pts, 600, 3, 0.7, true) == same);
      CHECK(k::parallel::rbf_pair_sum(pts, 600, qts, 500, 3, 0.7, false) == cross);
    });
  }
}

TEST_CASE("rbf pair sum skips the diagonal for a single set") {
  const std::vector<double> a{0.0, 1.0};
  CHECK(k::serial::rbf_pair_sum(a, 2, a, 2, 1, 1.0, true) == doctest::Approx(2.0 * std::exp(-1.0)));
  CHECK(k::serial::rbf_pair_sum(a, 2, a, 2, 1, 1.0, false) == doctest::Approx(2.0 + 2.0 * std::exp(-1.0)));
}

TEST_CASE("network and metric results do not depend on the backend") {
  NetSpec s;
  s.input_dim = 64;
  s.hidden_dims = {128, 128};
  s.output_dim = 64;
  s.time_embed_dim = 8;
  Engine eng(13);
  const ParamVector p = init_params(s, eng);
  Mat x(200, 64);
  fill_normal(x, eng);
  const std::vector<int> t(200, 10);
  NetTape tape_s, tape_p;

  k::set_default_backend(k::Backend::serial);
  const Mat ys = forward(s, p, x, t, {}, &tape_s);
  const auto gs = backward(s, p, tape_s, ys);
  const double ms = mmd2(x, ys, 1.0);
  k::set_default_backend(k::Backend::parallel);
  const Mat yp = forward(s, p, x, t, {}, &tape_p);
  const auto gp = backward(s, p, tape_p, yp);
  const double mp = mmd2(x, yp, 1.0);
  CHECK(ys == yp);
  CHECK(gs.params == gp.params);
  CHECK(gs.input == gp.input);
  CHECK(ms == mp);
}
