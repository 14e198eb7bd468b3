#pragma once

#include "dsm/nets.hpp"
#include "dsm/optim.hpp"
#include "dsm/oracle.hpp"
#include "dsm/rng.hpp"
#include "dsm/schedule.hpp"

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace dsm {

/// One training batch. Generator input is [lq | z]; lq may have zero columns.
struct Batch {
  Mat hq;
  Mat lq;
  std::vector<int> labels;
  Mat z;

  Eigen::Index size() const { return hq.rows(); }
  void validate() const;
};

/// Noise-prediction model eps(x_t, t, y).
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;
  virtual Mat predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const = 0;
};

class NetworkResidual final : public ResidualModel {
 public:
  NetworkResidual(NetSpec spec, ParamVector params);
  Mat predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const override;
  const NetSpec& spec() const { return spec_; }
  const ParamVector& params() const { return params_; }

 private:
  NetSpec spec_;
  ParamVector params_;
};

/// base(x_t, t, y) + net(x_t, t, y). Starting the net at zero output makes the
/// model coincide with base, the analogue of initializing the fake-score net
/// with the teacher's weights when the teacher is not a network. A null base
/// reduces to the plain network.
class OffsetResidual final : public ResidualModel {
 public:
  OffsetResidual(std::shared_ptr<const ResidualModel> base, NetSpec spec, ParamVector params);
  Mat predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const override;

 private:
  std::shared_ptr<const ResidualModel> base_;
  NetworkResidual net_;
};

/// Exact residual of a Gaussian-mixture target: -sigma_t * score of the
/// diffused mixture. Label k < per_label.size() selects per_label[k]; any other
/// label (the null label) selects the unconditional mixture.
class OracleResidual final : public ResidualModel {
 public:
  OracleResidual(NoiseSchedule schedule, GaussianMixture unconditional,
                 std::vector<GaussianMixture> per_label = {});
  Mat predict(const Mat& x_t, std::span<const int> t, std::span<const int> y) const override;
  const GaussianMixture& target(int label) const;

 private:
  NoiseSchedule schedule_;
  GaussianMixture unconditional_;
  std::vector<GaussianMixture> per_label_;
};

struct DistillState {
  NetSpec gen_spec;
  ParamVector gen_params;
  NetSpec fake_spec;
  ParamVector fake_params;
  std::shared_ptr<const ResidualModel> fake_base;  // optional, see OffsetResidual
  std::shared_ptr<const ResidualModel> teacher;
  NoiseSchedule schedule;
  double kappa = 1.5;
  double lambda = 1.0;
  bool dynamic = true;
  double static_alpha = 0.5;  // loss ratio when dynamic control is off
  int fake_updates = 1;       // fake-score steps per generator step
  int current_tmax = 0;
  double current_alpha = 0.0;
  AdamConfig gen_opt_cfg;
  AdamConfig fake_opt_cfg;
  AdamState gen_opt;
  AdamState fake_opt;
  long step = 0;

  void validate() const;
};

struct StepReport {
  long step = 0;
  double reg_loss = 0.0;
  double dsm_norm = 0.0;
  int tmax = 0;
  double alpha = 0.0;
  double fake_loss = 0.0;
  int t = 0;  // 0 when the score term was skipped
  double sigma_t = 0.0;
  double sigma_tmax = 0.0;
};

/// sqrt(sum_i |hq_i - gen_i|^2 / B).
double batch_distance(const Mat& hq, const Mat& gen);

/// sigma^{-1}(kappa * d), clamped to [0, T].
int dynamic_tmax(double d, double kappa, const NoiseSchedule& s);

/// Uniform integer in [ceil(0.02 tmax), tmax]; nullopt when tmax < 1.
std::optional<int> sample_timestep(int tmax, Engine& eng);

/// tmax / T.
double loss_alpha(int tmax, int num_steps);

Mat generator_input(const Batch& batch);
Mat generate(const DistillState& state, const Batch& batch, NetTape* tape = nullptr);

/// Gradient w.r.t. generator output x of the diffused KL(q_t || p_t):
///   omega(t) * alpha_t / sigma_t * (eps_teacher(x_t) - eps_fake(x_t)) / B
/// with x_t = alpha_t x + sigma_t eps. This equals
/// alpha_t * omega(t) * (score_q - score_p)(x_t) / B.
Mat score_difference_output_grad(const NoiseSchedule& s, const ResidualModel& teacher,
                                 const ResidualModel& fake, const Mat& x,
                                 std::span<const int> labels, int t, const Mat& eps);

/// Monte-Carlo estimate of grad_theta KL(q_t || p_t) at timestep t, back-
/// propagated through the generator only.
ParamVector dsm_generator_gradient(const DistillState& state, const Batch& batch, int t,
                                   Engine& noise);
ParamVector dsm_generator_gradient(const DistillState& state, const ResidualModel& teacher,
                                   const ResidualModel& fake, const Batch& batch, int t,
                                   Engine& noise);

struct RegressionResult {
  double loss = 0.0;
  ParamVector grad;
};
/// mean_i |G(lq_i, z_i, y_i) - hq_i|^2 and its exact gradient.
RegressionResult regression_gradient(const DistillState& state, const Batch& batch);

/// mean_i |eps_i - model(alpha_t x_i + sigma_t eps_i, t_i, y_i)|^2.
double denoising_loss(const ResidualModel& model, const NoiseSchedule& s, const Mat& x0,
                      std::span<const int> t, std::span<const int> y, const Mat& eps);

/// Exact gradient of the denoising loss above w.r.t. the parameters of a
/// network noise model, optionally added to a fixed base model.
RegressionResult denoising_gradient(const NetSpec& spec, const ParamVector& params,
                                    const NoiseSchedule& s, const Mat& x0, std::span<const int> t,
                                    std::span<const int> y, const Mat& eps,
                                    const ResidualModel* base = nullptr);

/// The fake-score model of a state (fake_base + fake net).
OffsetResidual fake_model(const DistillState& state);

/// One optimizer step of the fake-score net on generated samples. x is
/// recomputed from the batch and detached from the generator.
double fake_score_update(DistillState& state, const Batch& batch, RngStreams& rng);
/// Same, on an already generated (detached) sample set.
double fake_score_update_on(DistillState& state, const Mat& x, std::span<const int> labels,
                            RngStreams& rng);

/// Regression + dynamic score matching update of the generator followed by the
/// fake-score update on the detached generator output.
StepReport train_step(DistillState& state, const Batch& batch, RngStreams& rng);

/// |alpha_t - 1| |x| + sigma_t E|eps| + |x_hq - x|, upper bound on
/// E|x_t - x_hq| for eps ~ N(0, I_D).
double distance_bound(const NoiseSchedule& s, const Vec& x, const Vec& x_hq, int t);

/// E|eps| for eps ~ N(0, I_D).
double expected_gaussian_norm(int dim);

}  // namespace dsm
