#pragma once

#include "dsm/config.hpp"
#include "dsm/distill.hpp"
#include "dsm/metrics.hpp"
#include "dsm/oracle.hpp"

#include <filesystem>
#include <memory>
#include <vector>

namespace dsm {

/// Procedural texture families used as the HQ patch distribution.
inline constexpr int kTextureFamilies = 4;
Patch procedural_texture(int family, int size, Engine& eng);

/// Everything the trainer derives from a config: dims, labels, targets.
struct TaskSetup {
  int data_dim = 0;     // dimension of hq / generator output
  int lq_dim = 0;
  int num_classes = 0;  // real labels; the null label is num_classes
  int null_label() const { return num_classes; }
  int num_labels() const { return num_classes + 1; }
  std::optional<GaussianMixture> target;  // oracle tasks only
  NetSpec generator_spec;
  NetSpec denoiser_spec;
};

TaskSetup make_task_setup(const ExperimentConfig& cfg);
GaussianMixture make_target(const MixtureConfig& m);

/// Deterministic stream of training batches (hq, lq, labels, z).
class DatasetStream {
 public:
  DatasetStream(const ExperimentConfig& cfg, std::uint64_t seed);
  Batch next();
  Batch next(int batch_size);
  const TaskSetup& setup() const { return setup_; }

 private:
  struct Corpus {
    std::vector<Vec> hq, lq;
    std::vector<int> labels;
  };
  void fill_patch_item(std::uint64_t index, Vec& hq, Vec& lq, int& label);

  ExperimentConfig cfg_;
  TaskSetup setup_;
  Engine data_;
  Engine noise_;
  Engine latent_;
  std::uint64_t item_seed_;
  std::uint64_t next_item_ = 0;
  std::shared_ptr<const Corpus> corpus_;
};

/// Loads a make-corpus directory (manifest.json + hq/ lq/ PGM pairs).
struct CorpusItem {
  Patch hq, lq;
  int label = 0;
};
std::vector<CorpusItem> load_corpus(const std::filesystem::path& dir);
/// Writes count procedural HQ/LQ pairs and a manifest; returns the manifest path.
std::filesystem::path make_corpus(const ExperimentConfig& cfg, int count,
                                  const std::filesystem::path& dir);

struct TeacherResult {
  NetSpec spec;
  ParamVector params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::optional<double> oracle_cosine;  // agreement with the analytic residual
  bool from_cache = false;
};

/// Trains eps_psi with the denoising objective on target samples.
TeacherResult pretrain_teacher(const ExperimentConfig& cfg);

struct RunSummary {
  EvalReport initial;
  EvalReport final;
  std::vector<EvalReport> evaluations;
  std::vector<StepReport> steps;
  std::filesystem::path train_log;
  std::filesystem::path eval_log;
  std::filesystem::path metrics_json;
  std::vector<std::filesystem::path> checkpoints;
};

/// Held-out evaluation set and metrics for a generator.
class Evaluator {
 public:
  Evaluator(const ExperimentConfig& cfg, const TaskSetup& setup);
  EvalReport evaluate(const NetSpec& gen_spec, const ParamVector& gen_params, long step) const;
  const Batch& batch() const { return batch_; }
  const Mat& target_samples() const { return target_samples_; }

 private:
  ExperimentConfig cfg_;
  TaskSetup setup_;
  Batch batch_;
  Mat target_samples_;
};

RunSummary run_experiment(const ExperimentConfig& cfg);

json eval_to_json(const EvalReport& r);

}  // namespace dsm
