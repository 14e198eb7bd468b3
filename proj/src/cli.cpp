#include "dsm/cli.hpp"

#include "dsm/config.hpp"
#include "dsm/trainer.hpp"
#include "dsm/verify.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace dsm {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config = "default";
  std::optional<std::uint64_t> seed;
  std::string out;
};

void setup_logging() {
  static bool done = false;
  if (!done) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("dsmlab"));
    done = true;
  }
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("DSMLAB_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (fs::exists(c.config)) {
    cfg = load_config(c.config);
  } else if (auto builtin = builtin_config(c.config)) {
    cfg = *builtin;
  } else {
    throw ConfigError("config file not found: " + c.config);
  }
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

void write_result(const ExperimentConfig& cfg, const std::string& command, json body) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  json j = {{"command", command}, {"config_hash", hex64(config_hash(cfg))}, {"seed", cfg.seed}};
  j.update(body);
  const fs::path path = dir / "result.json";
  std::ofstream os(path, std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "config file path or built-in name (default, oracle_1d, patch_restore)");
  sub->add_option("--seed", c.seed, "override the root seed");
  sub->add_option("--out", c.out, "output directory");
}

int cmd_pretrain(const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const TeacherResult r = pretrain_teacher(cfg);
  fs::create_directories(cfg.output_dir);
  save_checkpoint(fs::path(cfg.output_dir) / "teacher.ckpt", r.spec, r.params);
  json body = {{"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"from_cache", r.from_cache},
               {"checkpoint", (fs::path(cfg.output_dir) / "teacher.ckpt").string()}};
  if (r.oracle_cosine) body["oracle_cosine"] = *r.oracle_cosine;
  const bool ok = r.final_loss < r.initial_loss;
  body["pass"] = ok;
  write_result(cfg, "pretrain-teacher", body);
  std::cout << "teacher loss " << r.initial_loss << " -> " << r.final_loss;
  if (r.oracle_cosine) std::cout << ", oracle cosine " << *r.oracle_cosine;
  std::cout << '\n';
  return ok ? kExitOk : kExitValidation;
}

int cmd_distill(const Common& c) {
  const ExperimentConfig cfg = resolve_config(c);
  const RunSummary s = run_experiment(cfg);
  json ckpts = json::array();
  for (const auto& p : s.checkpoints) ckpts.push_back(p.string());
  write_result(cfg, "distill",
               {{"initial", eval_to_json(s.initial)},
                {"final", eval_to_json(s.final)},
                {"train_log", s.train_log.string()},
                {"eval_log", s.eval_log.string()},
                {"metrics", s.metrics_json.string()},
                {"checkpoints", ckpts}});
  std::cout << eval_to_json(s.final).dump() << '\n';
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  const ExperimentConfig cfg = resolve_config(c);
  const fs::path path = checkpoint.empty() ? fs::path(cfg.output_dir) / "checkpoints" / "generator.ckpt" : fs::path(checkpoint);
  const Checkpoint ck = load_checkpoint(path);
  const TaskSetup setup = make_task_setup(cfg);
  if (!(ck.spec == setup.generator_spec)) {
    throw ConfigError("checkpoint architecture does not match the config's generator");
  }
  const Evaluator ev(cfg, setup);
  const EvalReport r = ev.evaluate(ck.spec, ck.params, 0);
  write_result(cfg, "eval", {{"checkpoint", path.string()}, {"metrics", eval_to_json(r)}});
  std::cout << eval_to_json(r).dump() << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Common& c, double tolerance) {
  const ExperimentConfig cfg = resolve_config(c);
  bool ok = true;
  json nets = json::array();
  for (const NetCheck& n : gradcheck_networks(cfg, cfg.seed, tolerance)) {
    ok = ok && n.report.pass;
    nets.push_back({{"name", n.name},
                    {"params", param_count(n.spec)},
                    {"max_rel_err", n.report.max_rel_err},
                    {"coords_checked", n.report.coords_checked},
                    {"pass", n.report.pass}});
    std::cout << n.name << ": max_rel_err " << n.report.max_rel_err << (n.report.pass ? " PASS" : " FAIL") << '\n';
  }
  write_result(cfg, "gradcheck", {{"tolerance", tolerance}, {"networks", nets}, {"pass", ok}});
  return ok ? kExitOk : kExitValidation;
}

int cmd_verify_gradient(const Common& c, long samples) {
  const ExperimentConfig cfg = resolve_config(c);
  if (samples < 2) throw ConfigError("--samples must be at least 2");
  const ScoreGradientReport r = verify_score_gradient(make_schedule(cfg.schedule), samples, cfg.seed);
  write_result(cfg, "verify-eq5", score_gradient_to_json(r));
  std::cout.precision(10);
  std::cout << "shift gradient " << r.shift.estimate << " expected " << r.shift.expected << " (t=" << r.shift.t
            << ", alpha_t=" << r.shift.alpha_t << ")\n"
            << "affine cosine " << r.affine.cosine << '\n'
            << (r.pass ? "PASS" : "FAIL") << '\n';
  return r.pass ? kExitOk : kExitValidation;
}

int cmd_degrade(const Common& c, const std::string& input, const std::string& output) {
  ExperimentConfig cfg = resolve_config(c);
  const Patch p = read_pgm(input);
  DegradationConfig dc = cfg.degradation;
  dc.rng_seed = derive_seed(cfg.seed, dc.rng_seed);
  const Patch lq = degrade(p, dc);
  write_pgm(output, lq);
  write_result(cfg, "degrade",
               {{"input", input}, {"output", output}, {"height", lq.height}, {"width", lq.width}});
  return kExitOk;
}

int cmd_make_corpus(const Common& c, int count) {
  ExperimentConfig cfg = resolve_config(c);
  const fs::path manifest = make_corpus(cfg, count, cfg.output_dir);
  write_result(cfg, "make-corpus", {{"count", count}, {"manifest", manifest.string()}});
  std::cout << manifest.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  setup_logging();
  CLI::App app{"dynamic score-matching distillation lab"};
  app.require_subcommand(1);

  Common common;
  double tolerance = 1e-4;
  long samples = 100000;
  int count = 256;
  std::string checkpoint, input, output;

  auto* pretrain = app.add_subcommand("pretrain-teacher", "train the denoiser on the target distribution");
  auto* distill = app.add_subcommand("distill", "run a distillation experiment");
  auto* eval = app.add_subcommand("eval", "evaluate a generator checkpoint");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of all configured networks");
  auto* verify = app.add_subcommand("verify-eq5", "closed-form check of the score-difference gradient");
  auto* deg = app.add_subcommand("degrade", "apply the degradation chain to a PGM patch");
  auto* corpus = app.add_subcommand("make-corpus", "write procedural HQ/LQ patch pairs");
  for (auto* sub : {pretrain, distill, eval, gradcheck, verify, deg, corpus}) add_common(sub, common);
  eval->add_option("--checkpoint", checkpoint, "generator checkpoint (default OUT/checkpoints/generator.ckpt)");
  gradcheck->add_option("--tolerance", tolerance, "max relative error");
  verify->add_option("--samples", samples, "Monte-Carlo draws");
  deg->add_option("--input", input, "input PGM")->required();
  deg->add_option("--output", output, "output PGM")->required();
  corpus->add_option("--count", count, "number of pairs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(common);
    if (*distill) return cmd_distill(common);
    if (*eval) return cmd_eval(common, checkpoint);
    if (*gradcheck) return cmd_gradcheck(common, tolerance);
    if (*verify) return cmd_verify_gradient(common, samples);
    if (*deg) return cmd_degrade(common, input, output);
    if (*corpus) return cmd_make_corpus(common, count);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitConfig;
}

}  // namespace dsm
