#include "dsm/distill.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace dsm {

void Batch::validate() const {
  const Eigen::Index b = hq.rows();
  if (b < 1) throw std::invalid_argument("batch must contain at least one sample");
  require_dims(lq.rows() == b && z.rows() == b && static_cast<Eigen::Index>(labels.size()) == b,
               "batch members disagree on batch size");
}

NetworkResidual::NetworkResidual(NetSpec spec, ParamVector params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  require_dims(params_.size() == param_count(spec_), "parameter count does not match net spec");
  require_dims(spec_.input_dim == spec_.output_dim, "noise model must map x_t to same dimension");
}

Mat NetworkResidual::predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const {
  return forward(spec_, params_, x_t, t, y);
}

OffsetResidual::OffsetResidual(std::shared_ptr<const ResidualModel> base, NetSpec spec,
                               ParamVector params)
    : base_(std::move(base)), net_(std::move(spec), std::move(params)) {}

Mat OffsetResidual::predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const {
  Mat out = net_.predict(x_t, t, y);
  if (base_) out += base_->predict(x_t, t, y);
  return out;
}

OracleResidual::OracleResidual(NoiseSchedule schedule, GaussianMixture unconditional,
                               std::vector<GaussianMixture> per_label)
    : schedule_(std::move(schedule)),
      unconditional_(std::move(unconditional)),
      per_label_(std::move(per_label)) {
  for (const auto& gm : per_label_) {
    require_dims(gm.dim() == unconditional_.dim(), "per-label targets must share dimension");
  }
}

const GaussianMixture& OracleResidual::target(int label) const {
  if (label >= 0 && label < static_cast<int>(per_label_.size())) {
    return per_label_[static_cast<std::size_t>(label)];
  }
  return unconditional_;
}

Mat OracleResidual::predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const {
  require_dims(x_t.cols() == unconditional_.dim(), "x_t dimension does not match oracle target");
  require_dims(t.size() == static_cast<std::size_t>(x_t.rows()), "need one timestep per row");
  Mat out(x_t.rows(), x_t.cols());
  std::map<std::pair<int, int>, GaussianMixture> diffused;
  for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
    const int label = y.empty() ? -1 : y[static_cast<std::size_t>(r)];
    const int tr = t[static_cast<std::size_t>(r)];
    const int key_label = (label >= 0 && label < static_cast<int>(per_label_.size())) ? label : -1;
    auto it = diffused.find({key_label, tr});
    if (it == diffused.end()) {
      it = diffused.emplace(std::pair{key_label, tr}, diffuse(target(label), schedule_, tr)).first;
    }
    out.row(r) = (-schedule_.sigma(tr) * it->second.score(x_t.row(r).transpose())).transpose();
  }
  return out;
}

void DistillState::validate() const {
  gen_spec.validate();
  fake_spec.validate();
  require_dims(gen_params.size() == param_count(gen_spec), "generator params do not match spec");
  require_dims(fake_params.size() == param_count(fake_spec), "fake params do not match spec");
  require_dims(fake_spec.input_dim == gen_spec.output_dim, "fake net input must match generator output");
  if (!teacher) throw std::invalid_argument("distillation needs a teacher");
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be > 0");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (current_tmax < 0 || current_tmax > schedule.num_steps()) {
    throw std::logic_error("current_tmax out of range");
  }
  if (current_alpha < 0.0 || current_alpha > 1.0) throw std::logic_error("current_alpha out of range");
  if (static_alpha < 0.0 || static_alpha > 1.0) throw std::invalid_argument("static_alpha out of range");
  if (fake_updates < 1) throw std::invalid_argument("fake_updates must be >= 1");
}

double batch_distance(const Mat& hq, const Mat& gen) {
  require_dims(hq.rows() == gen.rows() && hq.cols() == gen.cols(), "batch shapes differ");
  if (hq.rows() < 1) throw std::invalid_argument("batch must be non-empty");
  double total = 0.0;
  for (Eigen::Index r = 0; r < hq.rows(); ++r) total += (hq.row(r) - gen.row(r)).squaredNorm();
  return std::sqrt(total / static_cast<double>(hq.rows()));
}

int dynamic_tmax(double d, double kappa, const NoiseSchedule& s) {
  if (d < 0.0 || !(kappa > 0.0)) throw std::invalid_argument("dynamic_tmax needs d >= 0, kappa > 0");
  return s.inverse_sigma(kappa * d);
}

std::optional<int> sample_timestep(int tmax, Engine& eng) {
  if (tmax < 1) return std::nullopt;
  const int lo = (tmax + 49) / 50;  // ceil(0.02 * tmax)
  return std::uniform_int_distribution<int>(lo, tmax)(eng);
}

double loss_alpha(int tmax, int num_steps) {
  if (tmax < 0 || tmax > num_steps) throw std::invalid_argument("tmax outside [0, T]");
  return static_cast<double>(tmax) / static_cast<double>(num_steps);
}

Mat generator_input(const Batch& batch) {
  Mat in(batch.size(), batch.lq.cols() + batch.z.cols());
  in << batch.lq, batch.z;
  return in;
}

Mat generate(const DistillState& state, const Batch& batch, NetTape* tape) {
  batch.validate();
  return forward(state.gen_spec, state.gen_params, generator_input(batch), {}, batch.labels, tape);
}

Mat score_difference_output_grad(const NoiseSchedule& s, const ResidualModel& teacher,
                                 const ResidualModel& fake, const Mat& x,
                                 std::span<const int> labels, int t, const Mat& eps) {
  if (t < 1 || t > s.num_steps()) throw std::invalid_argument("score term needs 1 <= t <= T");
  require_dims(eps.rows() == x.rows() && eps.cols() == x.cols(), "noise shape does not match x");
  const double a = s.alpha(t);
  const double sg = s.sigma(t);
  const Mat x_t = a * x + sg * eps;
  const std::vector<int> ts(static_cast<std::size_t>(x.rows()), t);
  const Mat e_teacher = teacher.predict(x_t, ts, labels);
  const Mat e_fake = fake.predict(x_t, ts, labels);
  const double scale = s.weight(t) * a / sg / static_cast<double>(x.rows());
  return scale * (e_teacher - e_fake);
}

ParamVector dsm_generator_gradient(const DistillState& state, const ResidualModel& teacher,
                                   const ResidualModel& fake, const Batch& batch, int t,
                                   Engine& noise) {
  NetTape tape;
  const Mat x = generate(state, batch, &tape);
  Mat eps(x.rows(), x.cols());
  fill_normal(eps, noise);
  const Mat g = score_difference_output_grad(state.schedule, teacher, fake, x, batch.labels, t, eps);
  return backward(state.gen_spec, state.gen_params, tape, g).params;
}

ParamVector dsm_generator_gradient(const DistillState& state, const Batch& batch, int t,
                                   Engine& noise) {
  return dsm_generator_gradient(state, *state.teacher, fake_model(state), batch, t, noise);
}

RegressionResult regression_gradient(const DistillState& state, const Batch& batch) {
  NetTape tape;
  const Mat x = generate(state, batch, &tape);
  require_dims(x.cols() == batch.hq.cols(), "generator output does not match hq dimension");
  const double b = static_cast<double>(batch.size());
  const Mat diff = x - batch.hq;
  RegressionResult res;
  res.loss = diff.squaredNorm() / b;
  res.grad = backward(state.gen_spec, state.gen_params, tape, (2.0 / b) * diff).params;
  return res;
}

double denoising_loss(const ResidualModel& model, const NoiseSchedule& s, const Mat& x0,
                      std::span<const int> t, std::span<const int> y, const Mat& eps) {
  require_dims(eps.rows() == x0.rows() && eps.cols() == x0.cols(), "noise shape does not match x");
  require_dims(t.size() == static_cast<std::size_t>(x0.rows()), "need one timestep per row");
  Mat x_t(x0.rows(), x0.cols());
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    const int tr = t[static_cast<std::size_t>(r)];
    x_t.row(r) = s.alpha(tr) * x0.row(r) + s.sigma(tr) * eps.row(r);
  }
  return (eps - model.predict(x_t, t, y)).squaredNorm() / static_cast<double>(x0.rows());
}

RegressionResult denoising_gradient(const NetSpec& spec, const ParamVector& params,
                                    const NoiseSchedule& s, const Mat& x0, std::span<const int> t,
                                    std::span<const int> y, const Mat& eps,
                                    const ResidualModel* base) {
  require_dims(eps.rows() == x0.rows() && eps.cols() == x0.cols(), "noise shape does not match x");
  require_dims(t.size() == static_cast<std::size_t>(x0.rows()), "need one timestep per row");
  Mat x_t(x0.rows(), x0.cols());
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    const int tr = t[static_cast<std::size_t>(r)];
    x_t.row(r) = s.alpha(tr) * x0.row(r) + s.sigma(tr) * eps.row(r);
  }
  NetTape tape;
  Mat pred = forward(spec, params, x_t, t, y, &tape);
  if (base) pred += base->predict(x_t, t, y);
  const double b = static_cast<double>(x0.rows());
  const Mat diff = pred - eps;
  RegressionResult res;
  res.loss = diff.squaredNorm() / b;
  res.grad = backward(spec, params, tape, (2.0 / b) * diff).params;
  return res;
}

double fake_score_update_on(DistillState& state, const Mat& x, std::span<const int> labels,
                            RngStreams& rng) {
  const int T = state.schedule.num_steps();
  std::vector<int> ts(static_cast<std::size_t>(x.rows()));
  std::uniform_int_distribution<int> ut(1, T);
  for (int& t : ts) t = ut(rng.stream("fake-timestep"));
  Mat eps(x.rows(), x.cols());
  fill_normal(eps, rng.stream("fake-noise"));
  RegressionResult res =
      denoising_gradient(state.fake_spec, state.fake_params, state.schedule, x, ts, labels, eps,
                         state.fake_base.get());
  adamw_step(state.fake_params, res.grad, state.fake_opt, state.fake_opt_cfg);
  return res.loss;
}

OffsetResidual fake_model(const DistillState& state) {
  return OffsetResidual(state.fake_base, state.fake_spec, state.fake_params);
}

double fake_score_update(DistillState& state, const Batch& batch, RngStreams& rng) {
  const Mat x = generate(state, batch);
  return fake_score_update_on(state, x, batch.labels, rng);
}

StepReport train_step(DistillState& state, const Batch& batch, RngStreams& rng) {
  state.validate();
  batch.validate();
  const NoiseSchedule& s = state.schedule;
  const int T = s.num_steps();

  NetTape tape;
  const Mat x = generate(state, batch, &tape);
  require_dims(x.cols() == batch.hq.cols(), "generator output does not match hq dimension");

  StepReport rep;
  const double d = batch_distance(batch.hq, x);
  if (state.dynamic) {
    rep.tmax = dynamic_tmax(d, state.kappa, s);
    rep.alpha = loss_alpha(rep.tmax, T);
  } else {
    rep.tmax = T;
    rep.alpha = state.static_alpha;
  }
  const std::optional<int> t = sample_timestep(rep.tmax, rng.stream("timestep"));
  rep.sigma_tmax = s.sigma(rep.tmax);

  const double b = static_cast<double>(batch.size());
  const Mat diff = x - batch.hq;
  rep.reg_loss = diff.squaredNorm() / b;
  ParamVector total = backward(state.gen_spec, state.gen_params, tape, (2.0 / b) * diff).params;
  total *= rep.alpha;

  const bool score_term = state.lambda > 0.0 && t.has_value();
  if (score_term) {
    rep.t = *t;
    rep.sigma_t = s.sigma(*t);
    if (rep.sigma_t > rep.sigma_tmax) {
      throw std::logic_error("noise-scope bound violated: sigma_t > sigma_tmax");
    }
    Mat eps(x.rows(), x.cols());
    fill_normal(eps, rng.stream("diffusion-noise"));
    const Mat g = score_difference_output_grad(s, *state.teacher, fake_model(state), x, batch.labels, *t, eps);
    ParamVector dsm = backward(state.gen_spec, state.gen_params, tape, g).params;
    rep.dsm_norm = dsm.norm();
    dsm *= (1.0 - rep.alpha) * state.lambda;
    total += dsm;
  }
  adamw_step(state.gen_params, total, state.gen_opt, state.gen_opt_cfg);

  if (state.lambda > 0.0) {
    for (int k = 0; k < state.fake_updates; ++k) rep.fake_loss = fake_score_update_on(state, x, batch.labels, rng);
  }

  state.current_tmax = rep.tmax;
  state.current_alpha = rep.alpha;
  rep.step = ++state.step;
  return rep;
}

double expected_gaussian_norm(int dim) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  const double d = static_cast<double>(dim);
  return std::sqrt(2.0) * std::exp(std::lgamma((d + 1.0) / 2.0) - std::lgamma(d / 2.0));
}

double distance_bound(const NoiseSchedule& s, const Vec& x, const Vec& x_hq, int t) {
  require_dims(x.size() == x_hq.size(), "x and x_hq differ in dimension");
  return std::abs(s.alpha(t) - 1.0) * x.norm() +
         s.sigma(t) * expected_gaussian_norm(static_cast<int>(x.size())) + (x_hq - x).norm();
}

}  // namespace dsm
