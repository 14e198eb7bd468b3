#include "dsm/distill.hpp"
#include "dsm/verify.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dsm;

namespace {

const NoiseSchedule& sched() {
  static const NoiseSchedule s = NoiseSchedule::vp_linear(1000, 1e-4, 0.02);
  return s;
}

GaussianMixture target() {
  Vec a(2), b(2);
  a << -0.5, 0.0;
  b << 0.5, 0.0;
  const Mat c = 0.01 * Mat::Identity(2, 2);
  return GaussianMixture({0.5, 0.5}, {a, b}, {c, c});
}

DistillState make_state(std::uint64_t seed) {
  NetSpec g;
  g.input_dim = 4;
  g.hidden_dims = {16};
  g.output_dim = 2;
  g.cond_embed_dim = 2;
  g.num_labels = 3;
  NetSpec f;
  f.input_dim = 2;
  f.hidden_dims = {16};
  f.output_dim = 2;
  f.time_embed_dim = 8;
  f.cond_embed_dim = 2;
  f.num_labels = 3;
  Engine eng(seed);
  const auto gm = target();
  DistillState st{.gen_spec = g,
                  .gen_params = init_params(g, eng),
                  .fake_spec = f,
                  .fake_params = init_params(f, eng),
                  .fake_base = nullptr,
                  .teacher = std::make_shared<OracleResidual>(sched(), gm,
                                                              std::vector{gm.component(0), gm.component(1)}),
                  .schedule = sched(),
                  .kappa = 1.5,
                  .lambda = 1.0,
                  .dynamic = true,
                  .static_alpha = 0.5,
                  .fake_updates = 1,
                  .current_tmax = 0,
                  .current_alpha = 0.0,
                  .gen_opt_cfg = {},
                  .fake_opt_cfg = {},
                  .gen_opt = {},
                  .fake_opt = {},
                  .step = 0};
  return st;
}

Batch make_batch(int n, std::uint64_t seed) {
  Engine eng(seed);
  Batch b;
  b.hq = target().sample(n, eng, b.labels);
  b.lq.resize(n, 2);
  fill_normal(b.lq, eng);
  b.lq = b.hq + 0.1 * b.lq;
  b.z.resize(n, 2);
  fill_normal(b.z, eng);
  return b;
}

// Recovers eps exactly from x_t when the clean sample is known.
class KnownNoise final : public ResidualModel {
 public:
  KnownNoise(const NoiseSchedule& s, Mat x0) : s_(s), x0_(std::move(x0)) {}
  Mat predict(const Mat& x_t, std::span<const int> t, std::span<const int>) const override {
    Mat out(x_t.rows(), x_t.cols());
    for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
      const int tr = t[std::size_t(r)];
      out.row(r) = (x_t.row(r) - s_.alpha(tr) * x0_.row(r)) / s_.sigma(tr);
    }
    return out;
  }

 private:
  const NoiseSchedule& s_;
  Mat x0_;
};

}  // namespace

TEST_CASE("batch distance") {
  Mat hq = Mat::Zero(2, 2), gen(2, 2);
  gen << 3.0, 0.0, 0.0, 4.0;
  CHECK(batch_distance(hq, gen) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));

  Engine eng(1);
  Mat a(7, 5), b(7, 5);
  fill_normal(a, eng);
  fill_normal(b, eng);
  double s = 0.0;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 5; ++c) s += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
  }
  CHECK(batch_distance(a, b) == doctest::Approx(std::sqrt(s / 7.0)).epsilon(1e-14));
  CHECK_THROWS_AS(batch_distance(a, Mat::Zero(7, 4)), DimensionMismatch);
}

TEST_CASE("dynamic noise range") {
  const auto& s = sched();
  CHECK(dynamic_tmax(0.0, 1.5, s) == 0);
  CHECK(dynamic_tmax(s.sigma(1000) / 1.5, 1.5, s) == 1000);
  CHECK(dynamic_tmax(5.0, 1.5, s) == 1000);
  CHECK(dynamic_tmax(s.sigma(500) / 1.5, 1.5, s) == 500);
  CHECK_THROWS_AS(dynamic_tmax(-1.0, 1.5, s), std::invalid_argument);
  CHECK_THROWS_AS(dynamic_tmax(1.0, 0.0, s), std::invalid_argument);

  CHECK(loss_alpha(0, 1000) == 0.0);
  CHECK(loss_alpha(1000, 1000) == 1.0);
  CHECK(loss_alpha(500, 1000) == 0.5);
  CHECK_THROWS_AS(loss_alpha(1001, 1000), std::invalid_argument);
}

TEST_CASE("timestep sampling") {
  Engine eng(3);
  CHECK_FALSE(sample_timestep(0, eng).has_value());
  for (int i = 0; i < 100; ++i) CHECK(sample_timestep(1, eng) == 1);
  CHECK(sample_timestep(49, eng).value() >= 1);
  int lo = 1 << 30, hi = 0;
  double sum = 0.0;
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int t = *sample_timestep(1000, eng);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
    sum += t;
  }
  CHECK(lo >= 20);
  CHECK(hi == 1000);
  CHECK(std::abs(sum / n - 510.0) < 5.1);
}

TEST_CASE("score-difference gradient") {
  SUBCASE("identical residual models give zero") {
    DistillState st = make_state(2);
    const Batch b = make_batch(16, 3);
    Engine eng(4);
    const ParamVector g = dsm_generator_gradient(st, *st.teacher, *st.teacher, b, 300, eng);
    CHECK(g.norm() == 0.0);
  }
  SUBCASE("1-D shift generator equals alpha_t^2 mu") {
    const ShiftCheck c = verify_shift_gradient(sched(), 100000, 5);
    CHECK(std::abs(c.alpha_t - 0.8) < 1e-3);
    CHECK(c.expected == doctest::Approx(c.alpha_t * c.alpha_t * 0.5));
    CHECK(c.pass);
  }
  SUBCASE("affine generator matches finite differences of the closed-form KL") {
    for (int t : {30, 207, 600, 950}) {
      const AffineCheck c = verify_affine_gradient(sched(), t, 100000, 6 + t);
      CHECK_MESSAGE(c.cosine > 0.99, "t = " << t);
    }
  }
  SUBCASE("t out of range") {
    DistillState st = make_state(2);
    const Batch b = make_batch(4, 3);
    Engine eng(4);
    CHECK_THROWS_AS(dsm_generator_gradient(st, b, 0, eng), std::invalid_argument);
  }
  SUBCASE("does not touch fake or teacher") {
    DistillState st = make_state(7);
    const ParamVector fake = st.fake_params;
    const Batch b = make_batch(8, 8);
    Engine eng(9);
    dsm_generator_gradient(st, b, 100, eng);
    CHECK(st.fake_params == fake);
  }
}

TEST_CASE("regression gradient") {
  DistillState st = make_state(10);
  Batch b = make_batch(12, 11);

  SUBCASE("generator already at hq") {
    b.hq = generate(st, b);
    const auto r = regression_gradient(st, b);
    CHECK(r.loss == 0.0);
    CHECK(r.grad.norm() == 0.0);
  }
  SUBCASE("loss and finite differences") {
    const Mat x = generate(st, b);
    double naive = 0.0;
    for (int i = 0; i < 12; ++i) {
      for (int k = 0; k < 2; ++k) naive += (x(i, k) - b.hq(i, k)) * (x(i, k) - b.hq(i, k));
    }
    const auto r = regression_gradient(st, b);
    CHECK(r.loss == doctest::Approx(naive / 12.0).epsilon(1e-14));

    constexpr double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < st.gen_params.size(); ++i) {
      DistillState p = st, m = st;
      p.gen_params[i] += h;
      m.gen_params[i] -= h;
      const double fd = (regression_gradient(p, b).loss - regression_gradient(m, b).loss) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - r.grad[i]) / std::max({std::abs(fd), std::abs(r.grad[i]), 1e-6}));
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("denoising loss with the exact noise is zero") {
  Engine eng(12);
  Mat x0(10, 2), eps(10, 2);
  fill_normal(x0, eng);
  fill_normal(eps, eng);
  std::vector<int> t{1, 5, 50, 100, 200, 400, 600, 800, 999, 1000};
  const KnownNoise model(sched(), x0);
  CHECK(denoising_loss(model, sched(), x0, t, {}, eps) < 1e-20);
}

TEST_CASE("denoising gradient matches finite differences") {
  DistillState st = make_state(13);
  const Batch b = make_batch(6, 14);
  Engine eng(15);
  Mat eps(6, 2);
  fill_normal(eps, eng);
  const std::vector<int> t{3, 40, 200, 500, 800, 1000};
  const auto r = denoising_gradient(st.fake_spec, st.fake_params, sched(), b.hq, t, b.labels, eps);
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < st.fake_params.size(); i += 3) {
    ParamVector p = st.fake_params, m = st.fake_params;
    p[i] += h;
    m[i] -= h;
    const double fp = denoising_loss(NetworkResidual(st.fake_spec, p), sched(), b.hq, t, b.labels, eps);
    const double fm = denoising_loss(NetworkResidual(st.fake_spec, m), sched(), b.hq, t, b.labels, eps);
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - r.grad[i]) / std::max({std::abs(fd), std::abs(r.grad[i]), 1e-6}));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("fake-score update") {
  SUBCASE("detached from the generator") {
    DistillState st = make_state(16);
    const ParamVector gen = st.gen_params;
    const ParamVector fake = st.fake_params;
    RngStreams rng(17);
    fake_score_update(st, make_batch(8, 18), rng);
    CHECK(st.gen_params == gen);
    CHECK_FALSE(st.fake_params == fake);
  }
  SUBCASE("approaches the analytic floor on a fixed Gaussian") {
    // x ~ N(m, s^2 I): the Bayes-optimal noise prediction leaves per-dimension
    // variance alpha^2 s^2 / (alpha^2 s^2 + sigma^2).
    DistillState st = make_state(19);
    st.fake_opt_cfg.lr = 3e-3;
    const double s2 = 0.25;
    Vec m(2);
    m << 0.3, -0.2;
    const auto q = GaussianMixture::single(m, s2 * Mat::Identity(2, 2));
    RngStreams rng(20);
    Engine data(21);
    const std::vector<int> labels(256, 2);

    Engine eval_eng(22);
    const Mat x_eval = q.sample(20000, eval_eng);
    Mat eps_eval(20000, 2);
    fill_normal(eps_eval, eval_eng);
    std::vector<int> t_eval(20000);
    std::uniform_int_distribution<int> ut(1, 1000);
    double floor = 0.0;
    for (int& t : t_eval) {
      t = ut(eval_eng);
      const double a2 = sched().alpha(t) * sched().alpha(t);
      floor += 2.0 * a2 * s2 / (a2 * s2 + sched().sigma(t) * sched().sigma(t));
    }
    floor /= 20000.0;
    const std::vector<int> eval_labels(20000, 2);
    auto eval_loss = [&] {
      return denoising_loss(NetworkResidual(st.fake_spec, st.fake_params), sched(), x_eval, t_eval, eval_labels,
                            eps_eval);
    };
    const double before = eval_loss();
    for (int i = 0; i < 2000; ++i) fake_score_update_on(st, q.sample(256, data), labels, rng);
    const double after = eval_loss();
    CHECK(after < before);
    CHECK(after < 1.1 * floor);
    CHECK(after > 0.95 * floor);
  }
}

TEST_CASE("train step") {
  SUBCASE("generator already at hq") {
    DistillState st = make_state(23);
    Batch b = make_batch(16, 24);
    b.hq = generate(st, b);
    const ParamVector before = st.gen_params;
    RngStreams rng(25);
    const StepReport r = train_step(st, b, rng);
    CHECK(r.tmax == 0);
    CHECK(r.alpha == 0.0);
    CHECK(r.t == 0);
    CHECK(r.dsm_norm == 0.0);
    CHECK(r.reg_loss == 0.0);
    CHECK(st.step == 1);
    // Only decoupled weight decay moves the parameters.
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(st.gen_params[i] == doctest::Approx(before[i] * (1.0 - st.gen_opt_cfg.lr * st.gen_opt_cfg.weight_decay)));
    }
  }
  SUBCASE("bit-identical from identical state and seed") {
    DistillState a = make_state(26), b = make_state(26);
    RngStreams ra(27), rb(27);
    for (int i = 0; i < 5; ++i) {
      const Batch batch = make_batch(16, 28 + i);
      const StepReport x = train_step(a, batch, ra), y = train_step(b, batch, rb);
      CHECK(x.reg_loss == y.reg_loss);
      CHECK(x.dsm_norm == y.dsm_norm);
      CHECK(x.fake_loss == y.fake_loss);
      CHECK(x.t == y.t);
    }
    CHECK(a.gen_params == b.gen_params);
    CHECK(a.fake_params == b.fake_params);
  }
  SUBCASE("noise scope bound and teacher immutability") {
    DistillState st = make_state(29);
    NetSpec ts = st.fake_spec;
    Engine eng(30);
    const ParamVector tp = init_params(ts, eng);
    auto teacher = std::make_shared<NetworkResidual>(ts, tp);
    st.teacher = teacher;
    RngStreams rng(31);
    for (int i = 0; i < 300; ++i) {
      const StepReport r = train_step(st, make_batch(16, 100 + i), rng);
      CHECK(r.sigma_t <= r.sigma_tmax);
      CHECK(r.tmax == dynamic_tmax(std::sqrt(r.reg_loss), 1.5, sched()));
      if (r.t > 0) CHECK(r.t >= (r.tmax + 49) / 50);
    }
    CHECK(teacher->params() == tp);
  }
  SUBCASE("ablation switches") {
    DistillState st = make_state(32);
    st.dynamic = false;
    RngStreams rng(33);
    const StepReport r = train_step(st, make_batch(16, 34), rng);
    CHECK(r.tmax == 1000);
    CHECK(r.alpha == 0.5);

    DistillState ns = make_state(35);
    ns.lambda = 0.0;
    const ParamVector fake = ns.fake_params;
    for (int i = 0; i < 5; ++i) CHECK(train_step(ns, make_batch(16, 36 + i), rng).dsm_norm == 0.0);
    CHECK(ns.fake_params == fake);
  }
  SUBCASE("invalid state") {
    DistillState st = make_state(37);
    st.teacher = nullptr;
    RngStreams rng(38);
    CHECK_THROWS_AS(train_step(st, make_batch(4, 39), rng), std::invalid_argument);
  }
}

TEST_CASE("distance bound") {
  CHECK(expected_gaussian_norm(1) == doctest::Approx(std::sqrt(2.0 / std::numbers::pi)).epsilon(1e-14));
  CHECK(expected_gaussian_norm(2) == doctest::Approx(std::sqrt(std::numbers::pi / 2.0)).epsilon(1e-14));
  Engine eng(40);
  double mc = 0.0;
  for (int i = 0; i < 200000; ++i) mc += normal_vector(5, eng).norm();
  CHECK(std::abs(mc / 200000.0 - expected_gaussian_norm(5)) < 5e-3);

  for (int pair = 0; pair < 100; ++pair) {
    const Vec x = normal_vector(4, eng), hq = normal_vector(4, eng);
    for (int t = 1; t <= 1000; ++t) {
      REQUIRE(distance_bound(sched(), x, hq, t) >= distance_bound(sched(), x, hq, t - 1));
    }
  }
}
