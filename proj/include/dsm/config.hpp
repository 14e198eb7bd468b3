#pragma once

#include "dsm/degrade.hpp"
#include "dsm/nets.hpp"
#include "dsm/optim.hpp"
#include "dsm/schedule.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsm {

using json = nlohmann::json;

/// Malformed, missing or unknown configuration entries.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { oracle_1d, oracle_2d, patch_restore };
std::string to_string(Task t);

enum class TeacherMode { oracle, network };

struct NetConfig {
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::silu;
  int time_embed_dim = 0;
  int cond_embed_dim = 0;
};

struct ScheduleConfig {
  int num_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  WeightKind weight = WeightKind::constant;
};

struct MixtureConfig {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<std::vector<double>>> covariances;
  double corruption_sigma = 0.3;  // lq = hq + corruption_sigma * n
};

struct PatchConfig {
  int size = 16;
  std::string corpus;  // directory written by make-corpus; empty = procedural
  int num_eval = 256;
};

struct TeacherConfig {
  TeacherMode mode = TeacherMode::oracle;
  int pretrain_steps = 2000;
  int pretrain_batch = 128;
  double label_dropout = 0.1;
  std::string cache_dir;
};

struct AblationConfig {
  bool no_score = false;
  bool no_dynamic = false;
  bool no_condition = false;
  bool no_condition_eval_only = false;  // false: retrain without labels
  double static_alpha = 0.5;
};

struct ExperimentConfig {
  Task task = Task::oracle_2d;
  std::uint64_t seed = 1;
  long steps = 5000;
  int batch_size = 32;
  long eval_every = 1000;
  int eval_samples = 10000;
  std::string output_dir = "runs/default";
  bool log_wall_time = false;
  double kappa = 1.5;
  double lambda = 1.0;
  int z_dim = 2;
  double mmd_bandwidth = 0.1;
  bool fake_from_teacher = true;
  int fake_updates = 1;
  double ema_decay = 0.0;  // generator weight averaging for evaluation; 0 = off
  ScheduleConfig schedule;
  MixtureConfig target;
  PatchConfig patch;
  DegradationConfig degradation;
  NetConfig generator{{64, 64}, Activation::silu, 0, 4};
  NetConfig denoiser{{64, 64}, Activation::silu, 16, 4};
  TeacherConfig teacher;
  AdamConfig gen_opt;
  AdamConfig fake_opt;
  AdamConfig teacher_opt;
  AblationConfig ablations;

  void validate() const;
};

ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Built-in configurations: "default" (= "oracle_2d"), "oracle_1d", "patch_restore".
std::optional<ExperimentConfig> builtin_config(const std::string& name);
/// FNV-1a of the canonical JSON form of the effective config, output_dir excluded.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

NoiseSchedule make_schedule(const ScheduleConfig& c);

}  // namespace dsm
