#include "dsm/trainer.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace dsm {

namespace fs = std::filesystem;

Patch procedural_texture(int family, int size, Engine& eng) {
  if (family < 0 || family >= kTextureFamilies) throw std::invalid_argument("unknown texture family");
  if (size < 1) throw std::invalid_argument("texture size must be positive");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Patch p(size, size);
  const double n = static_cast<double>(size);
  switch (family) {
    case 0: {  // smooth ramp with a slow bend
      const double a = 0.2 + 0.6 * u(eng);
      const double gx = (u(eng) - 0.5) * 0.8;
      const double gy = (u(eng) - 0.5) * 0.8;
      const double bend = (u(eng) - 0.5) * 0.4;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          const double x = c / n - 0.5, y = r / n - 0.5;
          p.at(r, c) = a + gx * x + gy * y + bend * x * y * 4.0;
        }
      }
      break;
    }
    case 1: {  // oriented stripes
      const double theta = u(eng) * std::numbers::pi;
      const double freq = 0.06 + 0.1 * u(eng);
      const double phase = u(eng) * two_pi;
      const double amp = 0.2 + 0.2 * u(eng);
      const double base = 0.4 + 0.2 * u(eng);
      const double cx = std::cos(theta), sy = std::sin(theta);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          p.at(r, c) = base + amp * std::sin(two_pi * freq * (c * cx + r * sy) + phase);
        }
      }
      break;
    }
    case 2: {  // piecewise-constant blocks
      const int block = 4 << static_cast<int>(u(eng) * 2.0);
      const int nb = (size + block - 1) / block;
      std::vector<double> levels(static_cast<std::size_t>(nb * nb));
      for (double& l : levels) l = 0.15 + 0.7 * u(eng);
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          p.at(r, c) = levels[static_cast<std::size_t>((r / block) * nb + c / block)];
        }
      }
      break;
    }
    case 3: {  // soft blobs on a flat background
      const double bg = 0.2 + 0.3 * u(eng);
      for (double& v : p.pixels) v = bg;
      for (int k = 0; k < 3; ++k) {
        const double cy = u(eng) * n, cx = u(eng) * n;
        const double rad = n * (0.12 + 0.15 * u(eng));
        const double amp = (u(eng) - 0.3) * 0.7;
        for (int r = 0; r < size; ++r) {
          for (int c = 0; c < size; ++c) {
            const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
            p.at(r, c) += amp * std::exp(-d2 / (2.0 * rad * rad));
          }
        }
      }
      break;
    }
  }
  return clamp01(std::move(p));
}

GaussianMixture make_target(const MixtureConfig& m) {
  std::vector<Vec> means;
  std::vector<Mat> covs;
  for (const auto& mu : m.means) means.push_back(Eigen::Map<const Vec>(mu.data(), static_cast<Eigen::Index>(mu.size())));
  for (const auto& c : m.covariances) {
    const auto d = static_cast<Eigen::Index>(c.size());
    Mat cov(d, d);
    for (Eigen::Index i = 0; i < d; ++i) {
      if (static_cast<Eigen::Index>(c[static_cast<std::size_t>(i)].size()) != d) {
        throw ConfigError("covariance must be square");
      }
      for (Eigen::Index j = 0; j < d; ++j) cov(i, j) = c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    covs.push_back(cov);
  }
  try {
    return GaussianMixture(m.weights, std::move(means), std::move(covs));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid target mixture: ") + e.what());
  }
}

TaskSetup make_task_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  TaskSetup s;
  if (cfg.task == Task::patch_restore) {
    const int r = cfg.degradation.downsample_factor;
    s.data_dim = cfg.patch.size * cfg.patch.size;
    s.lq_dim = (cfg.patch.size / r) * (cfg.patch.size / r);
    s.num_classes = kTextureFamilies;
  } else {
    s.target = make_target(cfg.target);
    s.data_dim = s.target->dim();
    s.lq_dim = s.data_dim;
    s.num_classes = s.target->num_components();
  }
  const int T = cfg.schedule.num_steps;

  s.generator_spec.input_dim = s.lq_dim + cfg.z_dim;
  s.generator_spec.hidden_dims = cfg.generator.hidden;
  s.generator_spec.output_dim = s.data_dim;
  s.generator_spec.activation = cfg.generator.activation;
  s.generator_spec.time_embed_dim = 0;
  s.generator_spec.cond_embed_dim = cfg.generator.cond_embed_dim;
  s.generator_spec.num_labels = s.num_labels();
  s.generator_spec.max_timestep = T;

  s.denoiser_spec.input_dim = s.data_dim;
  s.denoiser_spec.hidden_dims = cfg.denoiser.hidden;
  s.denoiser_spec.output_dim = s.data_dim;
  s.denoiser_spec.activation = cfg.denoiser.activation;
  s.denoiser_spec.time_embed_dim = cfg.denoiser.time_embed_dim;
  s.denoiser_spec.cond_embed_dim = cfg.denoiser.cond_embed_dim;
  s.denoiser_spec.num_labels = s.num_labels();
  s.denoiser_spec.max_timestep = T;

  s.generator_spec.validate();
  s.denoiser_spec.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Data

DatasetStream::DatasetStream(const ExperimentConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      setup_(make_task_setup(cfg)),
      data_(derive_seed(seed, "data")),
      noise_(derive_seed(seed, "corruption")),
      latent_(derive_seed(seed, "latent")),
      item_seed_(derive_seed(seed, "patch-item")) {
  if (cfg_.task == Task::patch_restore && !cfg_.patch.corpus.empty()) {
    auto corpus = std::make_shared<Corpus>();
    for (CorpusItem& item : load_corpus(cfg_.patch.corpus)) {
      if (item.hq.height != cfg_.patch.size || item.hq.width != cfg_.patch.size ||
          static_cast<int>(item.lq.size()) != setup_.lq_dim) {
        throw ConfigError("corpus patch size does not match config");
      }
      corpus->hq.push_back(item.hq.flatten());
      corpus->lq.push_back(item.lq.flatten());
      corpus->labels.push_back(item.label);
    }
    if (corpus->hq.empty()) throw ConfigError("corpus is empty: " + cfg_.patch.corpus);
    corpus_ = std::move(corpus);
  }
}

Batch DatasetStream::next() { return next(cfg_.batch_size); }

void DatasetStream::fill_patch_item(std::uint64_t index, Vec& hq, Vec& lq, int& label) {
  Engine eng(derive_seed(item_seed_, index));
  label = std::uniform_int_distribution<int>(0, kTextureFamilies - 1)(eng);
  const Patch p = procedural_texture(label, cfg_.patch.size, eng);
  DegradationConfig dc = cfg_.degradation;
  dc.rng_seed = eng();
  hq = p.flatten();
  lq = degrade(p, dc).flatten();
}

Batch DatasetStream::next(int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  Batch b;
  b.labels.resize(static_cast<std::size_t>(batch_size));
  if (cfg_.task == Task::patch_restore) {
    b.hq.resize(batch_size, setup_.data_dim);
    b.lq.resize(batch_size, setup_.lq_dim);
    for (int i = 0; i < batch_size; ++i) {
      Vec hq, lq;
      int label = 0;
      if (corpus_) {
        const auto n = corpus_->hq.size();
        const auto k = std::uniform_int_distribution<std::size_t>(0, n - 1)(data_);
        hq = corpus_->hq[k];
        lq = corpus_->lq[k];
        label = corpus_->labels[k];
      } else {
        fill_patch_item(next_item_++, hq, lq, label);
      }
      b.hq.row(i) = hq.transpose();
      b.lq.row(i) = lq.transpose();
      b.labels[static_cast<std::size_t>(i)] = label;
    }
  } else {
    b.hq = setup_.target->sample(batch_size, data_, b.labels);
    Mat n(batch_size, setup_.lq_dim);
    fill_normal(n, noise_);
    b.lq = b.hq + cfg_.target.corruption_sigma * n;
  }
  b.z.resize(batch_size, cfg_.z_dim);
  fill_normal(b.z, latent_);
  return b;
}

// ---------------------------------------------------------------------------
// Corpus on disk

namespace {

std::string item_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d.pgm", i);
  return buf;
}

}  // namespace

std::vector<CorpusItem> load_corpus(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  std::ifstream is(manifest);
  if (!is) throw std::runtime_error("cannot open corpus manifest: " + manifest.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error("bad corpus manifest " + manifest.string() + ": " + e.what());
  }
  std::vector<CorpusItem> items;
  try {
    for (const auto& e : j.at("items")) {
      CorpusItem it;
      it.hq = read_pgm(dir / e.at("hq").get<std::string>());
      it.lq = read_pgm(dir / e.at("lq").get<std::string>());
      it.label = e.at("label").get<int>();
      if (it.label < 0 || it.label >= kTextureFamilies) throw std::runtime_error("corpus label out of range");
      items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("bad corpus manifest " + manifest.string() + ": " + e.what());
  }
  return items;
}

fs::path make_corpus(const ExperimentConfig& cfg, int count, const fs::path& dir) {
  if (cfg.task != Task::patch_restore) throw ConfigError("make-corpus needs a patch_restore config");
  if (count < 1) throw std::invalid_argument("count must be positive");
  ExperimentConfig procedural = cfg;
  procedural.patch.corpus.clear();
  DatasetStream stream(procedural, derive_seed(cfg.seed, "corpus"));
  const int side = cfg.patch.size;
  const int lq_side = side / cfg.degradation.downsample_factor;
  fs::create_directories(dir / "hq");
  fs::create_directories(dir / "lq");
  json items = json::array();
  for (int i = 0; i < count; ++i) {
    const Batch b = stream.next(1);
    const std::string name = item_name(i);
    write_pgm(dir / "hq" / name, Patch::from_vector(b.hq.row(0).transpose(), side, side));
    write_pgm(dir / "lq" / name, Patch::from_vector(b.lq.row(0).transpose(), lq_side, lq_side));
    items.push_back({{"hq", "hq/" + name}, {"lq", "lq/" + name}, {"label", b.labels[0]}});
  }
  json manifest = {{"size", side},
                   {"downsample_factor", cfg.degradation.downsample_factor},
                   {"count", count},
                   {"seed", cfg.seed},
                   {"config_hash", hex64(config_hash(cfg))},
                   {"items", std::move(items)}};
  const fs::path path = dir / "manifest.json";
  std::ofstream os(path);
  os << manifest.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return path;
}

// ---------------------------------------------------------------------------
// Teacher

namespace {

std::uint64_t teacher_hash(const ExperimentConfig& cfg) {
  const json full = config_to_json(cfg);
  json j = {{"seed", cfg.seed},        {"task", full["task"]},
            {"schedule", full["schedule"]}, {"target", full["target"]},
            {"patch", full["patch"]},  {"degradation", full["degradation"]},
            {"denoiser", full["nets"]["denoiser"]},
            {"teacher", full["teacher"]}, {"optimizer", full["optimizer"]["teacher"]}};
  j["teacher"].erase("cache_dir");
  j["teacher"].erase("mode");
  return fnv1a64(j.dump());
}

double cosine(const Mat& a, const Mat& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return (a.array() * b.array()).sum() / (na * nb);
}

struct Validation {
  Mat x0, eps;
  std::vector<int> t, y;
};

Validation teacher_validation(const ExperimentConfig& cfg, int n) {
  DatasetStream stream(cfg, derive_seed(cfg.seed, "teacher-validation"));
  Engine eng(derive_seed(cfg.seed, "teacher-validation-noise"));
  Validation v;
  const Batch b = stream.next(n);
  v.x0 = b.hq;
  v.y = b.labels;
  v.eps.resize(n, b.hq.cols());
  fill_normal(v.eps, eng);
  std::uniform_int_distribution<int> ut(1, cfg.schedule.num_steps);
  v.t.resize(static_cast<std::size_t>(n));
  for (int& t : v.t) t = ut(eng);
  return v;
}

OracleResidual make_oracle_residual(const NoiseSchedule& s, const GaussianMixture& target) {
  std::vector<GaussianMixture> per_label;
  for (int i = 0; i < target.num_components(); ++i) per_label.push_back(target.component(i));
  return OracleResidual(s, target, std::move(per_label));
}

}  // namespace

TeacherResult pretrain_teacher(const ExperimentConfig& cfg) {
  const TaskSetup setup = make_task_setup(cfg);
  const NoiseSchedule s = make_schedule(cfg.schedule);
  TeacherResult res;
  res.spec = setup.denoiser_spec;

  const Validation val = teacher_validation(cfg, 512);
  auto val_loss = [&](const ParamVector& p) {
    return denoising_loss(NetworkResidual(res.spec, p), s, val.x0, val.t, val.y, val.eps);
  };

  fs::path cache;
  if (!cfg.teacher.cache_dir.empty()) {
    cache = fs::path(cfg.teacher.cache_dir) / ("teacher_" + hex64(teacher_hash(cfg)) + ".ckpt");
  }

  RngStreams rng(derive_seed(cfg.seed, "teacher"));
  const ParamVector init = init_params(res.spec, rng.stream("init"));
  res.initial_loss = val_loss(init);

  if (!cache.empty() && fs::exists(cache)) {
    Checkpoint ck = load_checkpoint(cache);
    if (!(ck.spec == res.spec)) throw std::runtime_error("cached teacher has a different architecture: " + cache.string());
    res.params = std::move(ck.params);
    res.from_cache = true;
    spdlog::info("loaded teacher from cache {}", cache.string());
  } else {
    res.params = init;
    DatasetStream stream(cfg, derive_seed(cfg.seed, "teacher-data"));
    AdamState opt;
    Engine& teng = rng.stream("timestep");
    Engine& neng = rng.stream("noise");
    Engine& deng = rng.stream("label-dropout");
    std::uniform_int_distribution<int> ut(1, s.num_steps());
    const int B = cfg.teacher.pretrain_batch;
    std::vector<int> ts(static_cast<std::size_t>(B));
    for (int step = 0; step < cfg.teacher.pretrain_steps; ++step) {
      Batch b = stream.next(B);
      for (int& y : b.labels) {
        if (uniform01(deng) < cfg.teacher.label_dropout) y = setup.null_label();
      }
      for (int& t : ts) t = ut(teng);
      Mat eps(B, b.hq.cols());
      fill_normal(eps, neng);
      const RegressionResult r = denoising_gradient(res.spec, res.params, s, b.hq, ts, b.labels, eps);
      if (!std::isfinite(r.loss)) {
        throw std::runtime_error("teacher pretraining diverged at step " + std::to_string(step) +
                                 " (loss " + std::to_string(r.loss) +
                                 "); lower optimizer.teacher.lr");
      }
      adamw_step(res.params, r.grad, opt, cfg.teacher_opt);
      if ((step + 1) % 500 == 0) spdlog::debug("teacher step {} loss {:.6f}", step + 1, r.loss);
    }
    if (!cache.empty()) {
      fs::create_directories(cache.parent_path());
      save_checkpoint(cache, res.spec, res.params);
    }
  }
  res.final_loss = val_loss(res.params);

  if (setup.target) {
    const OracleResidual oracle = make_oracle_residual(s, *setup.target);
    Mat xt(val.x0.rows(), val.x0.cols());
    for (Eigen::Index i = 0; i < xt.rows(); ++i) {
      const int t = val.t[static_cast<std::size_t>(i)];
      xt.row(i) = s.alpha(t) * val.x0.row(i) + s.sigma(t) * val.eps.row(i);
    }
    const Mat a = NetworkResidual(res.spec, res.params).predict(xt, val.t, val.y);
    const Mat b = oracle.predict(xt, val.t, val.y);
    res.oracle_cosine = cosine(a, b);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluator::Evaluator(const ExperimentConfig& cfg, const TaskSetup& setup) : cfg_(cfg), setup_(setup) {
  const bool patch = cfg.task == Task::patch_restore;
  ExperimentConfig eval_cfg = cfg;
  if (patch) eval_cfg.patch.corpus.clear();
  DatasetStream stream(eval_cfg, derive_seed(cfg.seed, "eval-data"));
  batch_ = stream.next(patch ? cfg.patch.num_eval : cfg.eval_samples);
  if (cfg.ablations.no_condition) {
    for (int& y : batch_.labels) y = setup_.null_label();
  }
  if (setup_.target) {
    target_samples_ = setup_.target->sample(cfg.eval_samples, derive_seed(cfg.seed, "eval-target"));
  }
}

EvalReport Evaluator::evaluate(const NetSpec& gen_spec, const ParamVector& gen_params, long step) const {
  EvalReport r;
  r.task = to_string(cfg_.task);
  r.step = step;
  r.n_samples = batch_.size();
  const Mat x = forward(gen_spec, gen_params, generator_input(batch_), {}, batch_.labels);
  if (cfg_.task == Task::patch_restore) {
    const int side = cfg_.patch.size;
    const int f = cfg_.degradation.downsample_factor;
    double ps = 0.0, ss = 0.0, base = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Patch out = clamp01(Patch::from_vector(x.row(i).transpose(), side, side));
      const Patch hq = Patch::from_vector(batch_.hq.row(i).transpose(), side, side);
      const Patch lq = Patch::from_vector(batch_.lq.row(i).transpose(), side / f, side / f);
      ps += psnr_capped(out, hq);
      ss += ssim(out, hq);
      base += psnr_capped(upsample_nearest(lq, f), hq);
    }
    const double n = static_cast<double>(x.rows());
    r.psnr = ps / n;
    r.ssim = ss / n;
    r.baseline_psnr = base / n;
  } else {
    r.mmd2 = mmd2(x, target_samples_, cfg_.mmd_bandwidth);
    r.fit_kl_per_mode = fit_gaussian_kl_per_mode(x, *setup_.target);
    double worst = 0.0;
    for (double v : r.fit_kl_per_mode) worst = std::max(worst, v);
    r.fit_kl = worst;
  }
  return r;
}

json eval_to_json(const EvalReport& r) {
  auto num = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
  };
  json j = {{"task", r.task}, {"step", r.step}, {"n_samples", r.n_samples}};
  if (r.psnr) j["psnr"] = num(*r.psnr);
  if (r.ssim) j["ssim"] = num(*r.ssim);
  if (r.baseline_psnr) j["baseline_psnr"] = num(*r.baseline_psnr);
  if (r.mmd2) j["mmd2"] = num(*r.mmd2);
  if (r.fit_kl) j["fit_kl"] = num(*r.fit_kl);
  if (!r.fit_kl_per_mode.empty()) {
    json per = json::array();
    for (double v : r.fit_kl_per_mode) per.push_back(num(v));
    j["fit_kl_per_mode"] = per;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string opt_g(const std::optional<double>& v) { return v ? fmt_g(*v) : ""; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
  const TaskSetup setup = make_task_setup(cfg);
  const NoiseSchedule sched = make_schedule(cfg.schedule);
  const fs::path out = cfg.output_dir;
  fs::create_directories(out / "checkpoints");
  write_text(out / "config.json", config_to_json(cfg).dump(2) + "\n");

  RunSummary sum;
  sum.train_log = out / "train_log.csv";
  sum.eval_log = out / "eval_log.csv";
  sum.metrics_json = out / "metrics.json";

  std::shared_ptr<const ResidualModel> teacher;
  std::optional<TeacherResult> trained;
  if (cfg.teacher.mode == TeacherMode::oracle) {
    teacher = std::make_shared<OracleResidual>(make_oracle_residual(sched, *setup.target));
  } else {
    trained = pretrain_teacher(cfg);
    teacher = std::make_shared<NetworkResidual>(trained->spec, trained->params);
    spdlog::info("teacher denoising loss {:.5f} -> {:.5f}", trained->initial_loss, trained->final_loss);
  }

  RngStreams rng(cfg.seed);
  ParamVector gen_params = init_params(setup.generator_spec, rng.stream("init"));
  ParamVector fake_params;
  if (cfg.fake_from_teacher) {
    if (!trained) trained = pretrain_teacher(cfg);
    fake_params = trained->params;
  } else {
    fake_params = init_params(setup.denoiser_spec, rng.stream("fake-init"));
  }
  DistillState st{.gen_spec = setup.generator_spec,
                  .gen_params = std::move(gen_params),
                  .fake_spec = setup.denoiser_spec,
                  .fake_params = std::move(fake_params),
                  .fake_base = nullptr,
                  .teacher = teacher,
                  .schedule = sched,
                  .kappa = cfg.kappa,
                  .lambda = cfg.ablations.no_score ? 0.0 : cfg.lambda,
                  .dynamic = !cfg.ablations.no_dynamic,
                  .static_alpha = cfg.ablations.static_alpha,
                  .fake_updates = cfg.fake_updates,
                  .current_tmax = 0,
                  .current_alpha = 0.0,
                  .gen_opt_cfg = cfg.gen_opt,
                  .fake_opt_cfg = cfg.fake_opt,
                  .gen_opt = {},
                  .fake_opt = {},
                  .step = 0};

  const Evaluator evaluator(cfg, setup);
  DatasetStream stream(cfg, rng.stream("data")());
  const bool null_train = cfg.ablations.no_condition && !cfg.ablations.no_condition_eval_only;

  std::ofstream tlog(sum.train_log, std::ios::binary);
  std::ofstream elog(sum.eval_log, std::ios::binary);
  if (!tlog || !elog) throw std::runtime_error("cannot open logs in " + out.string());
  tlog << "step,reg_loss,dsm_norm,Tmax,alpha,fake_loss,wall_ms,t,sigma_t,sigma_tmax\n";
  elog << "step,psnr,ssim,baseline_psnr,mmd2,fit_kl\n";

  const bool use_ema = cfg.ema_decay > 0.0;
  ParamVector ema = st.gen_params;
  auto eval_params = [&]() -> const ParamVector& { return use_ema ? ema : st.gen_params; };

  auto record_eval = [&](long step) {
    EvalReport r = evaluator.evaluate(st.gen_spec, eval_params(), step);
    elog << step << ',' << opt_g(r.psnr) << ',' << opt_g(r.ssim) << ',' << opt_g(r.baseline_psnr)
         << ',' << opt_g(r.mmd2) << ',' << opt_g(r.fit_kl) << '\n';
    elog.flush();
    sum.evaluations.push_back(r);
    return r;
  };

  const auto start = std::chrono::steady_clock::now();
  try {
    sum.initial = record_eval(0);
    for (long step = 1; step <= cfg.steps; ++step) {
      Batch b = stream.next();
      if (null_train) {
        for (int& y : b.labels) y = setup.null_label();
      }
      const StepReport rep = train_step(st, b, rng);
      if (use_ema) {
        for (std::size_t i = 0; i < ema.size(); ++i) {
          ema[i] = cfg.ema_decay * ema[i] + (1.0 - cfg.ema_decay) * st.gen_params[i];
        }
      }
      if (!std::isfinite(rep.reg_loss) || !std::isfinite(rep.dsm_norm)) {
        throw std::runtime_error("training diverged at step " + std::to_string(step));
      }
      const double wall =
          cfg.log_wall_time
              ? std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()
              : 0.0;
      tlog << rep.step << ',' << fmt_g(rep.reg_loss) << ',' << fmt_g(rep.dsm_norm) << ',' << rep.tmax << ','
           << fmt_g(rep.alpha) << ',' << fmt_g(rep.fake_loss) << ',' << fmt_g(wall) << ',' << rep.t << ','
           << fmt_g(rep.sigma_t) << ',' << fmt_g(rep.sigma_tmax) << '\n';
      sum.steps.push_back(rep);
      if (step % cfg.eval_every == 0 || step == cfg.steps) {
        tlog.flush();
        const EvalReport r = record_eval(step);
        spdlog::info("step {} reg {:.5f} Tmax {} {}", step, rep.reg_loss, rep.tmax, eval_to_json(r).dump());
      }
    }
  } catch (...) {
    tlog.flush();
    elog.flush();
    spdlog::error("run aborted; partial logs kept in {}", out.string());
    throw;
  }
  sum.final = sum.evaluations.back();

  const fs::path ck = out / "checkpoints";
  save_checkpoint(ck / "generator.ckpt", st.gen_spec, st.gen_params);
  save_checkpoint(ck / "fake.ckpt", st.fake_spec, st.fake_params);
  sum.checkpoints = {ck / "generator.ckpt", ck / "fake.ckpt"};
  if (use_ema) {
    save_checkpoint(ck / "generator_ema.ckpt", st.gen_spec, ema);
    sum.checkpoints.push_back(ck / "generator_ema.ckpt");
  }
  if (cfg.teacher.mode == TeacherMode::network) {
    save_checkpoint(ck / "teacher.ckpt", trained->spec, trained->params);
    sum.checkpoints.push_back(ck / "teacher.ckpt");
  }

  json evals = json::array();
  for (const EvalReport& r : sum.evaluations) evals.push_back(eval_to_json(r));
  json m = {{"task", to_string(cfg.task)},
            {"config_hash", hex64(config_hash(cfg))},
            {"seed", cfg.seed},
            {"steps", cfg.steps},
            {"evaluations", evals},
            {"final", eval_to_json(sum.final)}};
  if (trained) {
    m["teacher"] = {{"initial_loss", trained->initial_loss}, {"final_loss", trained->final_loss}};
    if (trained->oracle_cosine) m["teacher"]["oracle_cosine"] = *trained->oracle_cosine;
  }
  write_text(sum.metrics_json, m.dump(2) + "\n");
  return sum;
}

}  // namespace dsm
