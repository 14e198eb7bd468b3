#include "dsm/config.hpp"

#include "dsm/rng.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace dsm {

std::string to_string(Task t) {
  switch (t) {
    case Task::oracle_1d: return "oracle_1d";
    case Task::oracle_2d: return "oracle_2d";
    case Task::patch_restore: return "patch_restore";
  }
  return "oracle_2d";
}

namespace {

Task parse_task(const std::string& s) {
  if (s == "oracle_1d") return Task::oracle_1d;
  if (s == "oracle_2d") return Task::oracle_2d;
  if (s == "patch_restore") return Task::patch_restore;
  throw ConfigError("unknown task '" + s + "'");
}

// Reads keys from one JSON object and rejects anything it was not asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where() + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + sub(it.key().c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : "config." + path_ + ": "; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_net(const json& j, const std::string& path, NetConfig& n) {
  Section s(j, path);
  s.read("hidden", n.hidden);
  std::string act = to_string(n.activation);
  s.read("activation", act);
  try {
    n.activation = parse_activation(act);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  s.read("time_embed_dim", n.time_embed_dim);
  s.read("cond_embed_dim", n.cond_embed_dim);
  s.finish();
}

json net_json(const NetConfig& n) {
  return {{"hidden", n.hidden},
          {"activation", to_string(n.activation)},
          {"time_embed_dim", n.time_embed_dim},
          {"cond_embed_dim", n.cond_embed_dim}};
}

void read_adam(const json& j, const std::string& path, AdamConfig& a) {
  Section s(j, path);
  s.read("lr", a.lr);
  s.read("beta1", a.beta1);
  s.read("beta2", a.beta2);
  s.read("eps", a.eps);
  s.read("weight_decay", a.weight_decay);
  s.finish();
}

json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
          {"weight_decay", a.weight_decay}};
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section s(j, "");
  std::string task = to_string(c.task);
  s.read("task", task);
  c.task = parse_task(task);
  s.read("seed", c.seed);
  s.read("steps", c.steps);
  s.read("batch_size", c.batch_size);
  s.read("eval_every", c.eval_every);
  s.read("eval_samples", c.eval_samples);
  s.read("output_dir", c.output_dir);
  s.read("log_wall_time", c.log_wall_time);
  s.read("kappa", c.kappa);
  s.read("lambda", c.lambda);
  s.read("z_dim", c.z_dim);
  s.read("mmd_bandwidth", c.mmd_bandwidth);
  s.read("fake_from_teacher", c.fake_from_teacher);
  s.read("fake_updates", c.fake_updates);
  s.read("ema_decay", c.ema_decay);

  if (const json* sj = s.child("schedule")) {
    Section ss(*sj, "schedule");
    ss.read("num_steps", c.schedule.num_steps);
    ss.read("beta_min", c.schedule.beta_min);
    ss.read("beta_max", c.schedule.beta_max);
    std::string w = to_string(c.schedule.weight);
    ss.read("weight", w);
    try {
      c.schedule.weight = parse_weight_kind(w);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    ss.finish();
  }
  if (const json* tj = s.child("target")) {
    Section ts(*tj, "target");
    ts.read("weights", c.target.weights);
    ts.read("means", c.target.means);
    ts.read("covariances", c.target.covariances);
    ts.read("corruption_sigma", c.target.corruption_sigma);
    ts.finish();
  }
  if (const json* pj = s.child("patch")) {
    Section ps(*pj, "patch");
    ps.read("size", c.patch.size);
    ps.read("corpus", c.patch.corpus);
    ps.read("num_eval", c.patch.num_eval);
    ps.finish();
  }
  if (const json* dj = s.child("degradation")) {
    Section ds(*dj, "degradation");
    ds.read("blur_sigma", c.degradation.blur_sigma);
    ds.read("kernel_radius", c.degradation.kernel_radius);
    ds.read("downsample_factor", c.degradation.downsample_factor);
    ds.read("noise_sigma", c.degradation.noise_sigma);
    ds.read("jpeg_quality", c.degradation.jpeg_quality);
    ds.read("seed", c.degradation.rng_seed);
    ds.read("second_order", c.degradation.second_order);
    ds.finish();
  }
  if (const json* nj = s.child("nets")) {
    Section ns(*nj, "nets");
    if (const json* g = ns.child("generator")) read_net(*g, "nets.generator", c.generator);
    if (const json* d = ns.child("denoiser")) read_net(*d, "nets.denoiser", c.denoiser);
    ns.finish();
  }
  if (const json* tj = s.child("teacher")) {
    Section ts(*tj, "teacher");
    std::string mode = c.teacher.mode == TeacherMode::oracle ? "oracle" : "network";
    ts.read("mode", mode);
    if (mode == "oracle") {
      c.teacher.mode = TeacherMode::oracle;
    } else if (mode == "network") {
      c.teacher.mode = TeacherMode::network;
    } else {
      throw ConfigError("config.teacher.mode must be 'oracle' or 'network'");
    }
    ts.read("pretrain_steps", c.teacher.pretrain_steps);
    ts.read("pretrain_batch", c.teacher.pretrain_batch);
    ts.read("label_dropout", c.teacher.label_dropout);
    ts.read("cache_dir", c.teacher.cache_dir);
    ts.finish();
  }
  if (const json* oj = s.child("optimizer")) {
    Section os(*oj, "optimizer");
    if (const json* g = os.child("generator")) read_adam(*g, "optimizer.generator", c.gen_opt);
    if (const json* f = os.child("fake")) read_adam(*f, "optimizer.fake", c.fake_opt);
    if (const json* t = os.child("teacher")) read_adam(*t, "optimizer.teacher", c.teacher_opt);
    os.finish();
  }
  if (const json* aj = s.child("ablations")) {
    Section as(*aj, "ablations");
    as.read("no_score", c.ablations.no_score);
    as.read("no_dynamic", c.ablations.no_dynamic);
    as.read("no_condition", c.ablations.no_condition);
    as.read("no_condition_eval_only", c.ablations.no_condition_eval_only);
    as.read("static_alpha", c.ablations.static_alpha);
    as.finish();
  }
  s.finish();
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  j["seed"] = c.seed;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["eval_every"] = c.eval_every;
  j["eval_samples"] = c.eval_samples;
  j["output_dir"] = c.output_dir;
  j["log_wall_time"] = c.log_wall_time;
  j["kappa"] = c.kappa;
  j["lambda"] = c.lambda;
  j["z_dim"] = c.z_dim;
  j["mmd_bandwidth"] = c.mmd_bandwidth;
  j["fake_from_teacher"] = c.fake_from_teacher;
  j["fake_updates"] = c.fake_updates;
  j["ema_decay"] = c.ema_decay;
  j["schedule"] = {{"num_steps", c.schedule.num_steps},
                   {"beta_min", c.schedule.beta_min},
                   {"beta_max", c.schedule.beta_max},
                   {"weight", to_string(c.schedule.weight)}};
  j["target"] = {{"weights", c.target.weights},
                 {"means", c.target.means},
                 {"covariances", c.target.covariances},
                 {"corruption_sigma", c.target.corruption_sigma}};
  j["patch"] = {{"size", c.patch.size}, {"corpus", c.patch.corpus}, {"num_eval", c.patch.num_eval}};
  j["degradation"] = {{"blur_sigma", c.degradation.blur_sigma},
                      {"kernel_radius", c.degradation.kernel_radius},
                      {"downsample_factor", c.degradation.downsample_factor},
                      {"noise_sigma", c.degradation.noise_sigma},
                      {"jpeg_quality", c.degradation.jpeg_quality},
                      {"seed", c.degradation.rng_seed},
                      {"second_order", c.degradation.second_order}};
  j["nets"] = {{"generator", net_json(c.generator)}, {"denoiser", net_json(c.denoiser)}};
  j["teacher"] = {{"mode", c.teacher.mode == TeacherMode::oracle ? "oracle" : "network"},
                  {"pretrain_steps", c.teacher.pretrain_steps},
                  {"pretrain_batch", c.teacher.pretrain_batch},
                  {"label_dropout", c.teacher.label_dropout},
                  {"cache_dir", c.teacher.cache_dir}};
  j["optimizer"] = {{"generator", adam_json(c.gen_opt)},
                    {"fake", adam_json(c.fake_opt)},
                    {"teacher", adam_json(c.teacher_opt)}};
  j["ablations"] = {{"no_score", c.ablations.no_score},
                    {"no_dynamic", c.ablations.no_dynamic},
                    {"no_condition", c.ablations.no_condition},
                    {"no_condition_eval_only", c.ablations.no_condition_eval_only},
                    {"static_alpha", c.ablations.static_alpha}};
  return j;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
  if (steps < 0) fail("steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (eval_samples < 2) fail("eval_samples must be >= 2");
  if (!(kappa > 0.0)) fail("kappa must be > 0");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (z_dim < 0) fail("z_dim must be >= 0");
  if (fake_updates < 1) fail("fake_updates must be >= 1");
  if (ema_decay < 0.0 || ema_decay >= 1.0) fail("ema_decay must be in [0, 1)");
  if (!(mmd_bandwidth > 0.0)) fail("mmd_bandwidth must be > 0");
  if (ablations.static_alpha < 0.0 || ablations.static_alpha > 1.0) fail("static_alpha must be in [0, 1]");
  if (teacher.pretrain_steps < 0 || teacher.pretrain_batch < 1) fail("bad teacher pretraining settings");
  if (teacher.label_dropout < 0.0 || teacher.label_dropout > 1.0) fail("label_dropout must be in [0, 1]");
  try {
    make_schedule(schedule);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  for (const NetConfig* n : {&generator, &denoiser}) {
    for (int h : n->hidden) {
      if (h < 1) fail("hidden widths must be positive");
    }
    if (n->time_embed_dim < 0 || n->cond_embed_dim < 0) fail("embedding widths must be >= 0");
  }
  if (task == Task::patch_restore) {
    try {
      degradation.validate();
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    const int r = degradation.downsample_factor;
    if (patch.size % r != 0 || (patch.size / r) % 8 != 0) {
      fail("patch.size / downsample_factor must be a multiple of 8");
    }
    if (teacher.mode == TeacherMode::oracle) fail("patch_restore has no analytic teacher; use mode 'network'");
    if (patch.num_eval < 1) fail("patch.num_eval must be >= 1");
  } else {
    if (target.weights.empty()) fail("oracle tasks need target.weights");
    const std::size_t d = task == Task::oracle_1d ? 1 : 2;
    if (target.means.size() != target.weights.size() ||
        target.covariances.size() != target.weights.size()) {
      fail("target weights, means and covariances must have equal length");
    }
    for (std::size_t i = 0; i < target.means.size(); ++i) {
      if (target.means[i].size() != d || target.covariances[i].size() != d) fail("target dimension mismatch");
      for (const auto& row : target.covariances[i]) {
        if (row.size() != d) fail("covariance must be square");
      }
    }
    if (target.corruption_sigma < 0.0) fail("corruption_sigma must be >= 0");
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::optional<ExperimentConfig> builtin_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "default" || name == "oracle_2d") {
    c.task = Task::oracle_2d;
    c.output_dir = "runs/oracle_2d";
    c.target.weights = {0.5, 0.5};
    c.target.means = {{-0.5, 0.0}, {0.5, 0.0}};
    c.target.covariances = {{{0.01, 0.0}, {0.0, 0.01}}, {{0.01, 0.0}, {0.0, 0.01}}};
    c.target.corruption_sigma = 0.3;
    c.z_dim = 2;
  } else if (name == "oracle_1d") {
    c.task = Task::oracle_1d;
    c.output_dir = "runs/oracle_1d";
    c.target.weights = {1.0};
    c.target.means = {{0.5}};
    c.target.covariances = {{{0.01}}};
    c.target.corruption_sigma = 0.3;
    c.z_dim = 1;
  } else if (name == "patch_restore") {
    c.task = Task::patch_restore;
    c.output_dir = "runs/patch_restore";
    c.steps = 10000;
    c.eval_every = 2500;
    c.z_dim = 8;
    c.generator = {{128, 128}, Activation::silu, 0, 4};
    c.denoiser = {{128, 128}, Activation::silu, 16, 4};
    c.teacher.mode = TeacherMode::network;
    c.teacher.pretrain_steps = 3000;
    c.teacher.pretrain_batch = 64;
    c.schedule.weight = WeightKind::sigma_sq;
  } else {
    return std::nullopt;
  }
  if (c.task != Task::patch_restore) {
    c.gen_opt.lr = 1e-4;
    c.fake_updates = 4;
    c.ema_decay = 0.99;
  }
  c.validate();
  return c;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

NoiseSchedule make_schedule(const ScheduleConfig& c) {
  return NoiseSchedule::vp_linear(c.num_steps, c.beta_min, c.beta_max, c.weight);
}

}  // namespace dsm
