#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unirep/balancers.hpp"
#include "unirep/data.hpp"
#include "unirep/distill.hpp"
#include "unirep/models.hpp"
#include "unirep/objective.hpp"
#include "unirep/optim.hpp"

namespace unirep {

enum class Stage { teachers, universal, groups };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct OptimSettings {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double weight_decay = 0.0;
  LrSchedule schedule = LrSchedule::step_half;
};

struct RunConfig {
  Stage stage = Stage::universal;
  int channels = 16;
  AdapterKind adapter = AdapterKind::linear;
  OptimSettings main;
  OptimSettings adapter_optim{OptimizerKind::adam, 0.01, 1e-4, LrSchedule::cosine};
  int epochs = 10;
  int batch_size = 16;
  DistillationConfig distill;
  BalancerKind balancer = BalancerKind::uniform;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::optional<std::string> anchor_task;
  double anchor_share = 0.5;
  bool flip_augment = false;
  int jobs = 1;
  /// Continue from the newest epoch checkpoint in the run directory.
  bool resume = false;
  /// Stops after this iteration without writing a checkpoint (simulated
  /// interruption); negative disables.
  long stop_after_iteration = -1;
  /// Per-iteration term lines in metrics.jsonl.
  bool log_iterations = true;
  int eval_batch_size = 64;

  void validate(const DatasetSuite& suite) const;
};

nlohmann::json to_json(const RunConfig& cfg);

struct TrainResult {
  std::filesystem::path run_dir;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  /// (iteration, total objective) for iterations run by this call.
  std::vector<std::pair<long, double>> loss_trace;
  long iterations = 0;
  int epochs_completed = 0;
  bool interrupted = false;
  int best_epoch = -1;
  double best_val = 0.0;
  std::map<std::string, double> val_metrics;  // at the best epoch
};

/// Training loop shared by every stage. Trains `model` on `tasks` (all model
/// tasks when empty) with the objective of `cfg.distill`; best-on-val weights
/// are loaded back into `model` on return.
/// `only_task` restricts batches to samples labelled for that task.
TrainResult train_model(const DatasetSuite& suite, UniversalModel& model, const TeacherSet& teachers,
                        const RunConfig& cfg, const std::filesystem::path& run_dir,
                        const std::optional<std::string>& only_task = std::nullopt);

struct TeacherRecord {
  std::string task;
  std::filesystem::path checkpoint;
  std::uint64_t checksum = 0;
  std::map<std::string, double> val_metrics;
};

/// One frozen single-task model per task, trained as independent jobs
/// (cfg.jobs at a time) under <out>/teachers/<task>.
std::map<std::string, TeacherRecord> train_teachers(const DatasetSuite& suite, const RunConfig& cfg);

/// Loads every teacher under <out>/teachers, verifying checksums.
std::map<std::string, SingleTaskModel> load_teachers(const std::filesystem::path& out_dir,
                                                     const std::vector<std::string>& task_ids);
TeacherSet teacher_set(const std::map<std::string, SingleTaskModel>& teachers);

struct UniversalRun {
  TrainResult train;
  std::filesystem::path model_checkpoint;
  std::map<std::string, std::uint64_t> teacher_checksums_before, teacher_checksums_after;
};

/// Stage 2 with frozen teachers; raises IntegrityError if any teacher
/// changes during training. Writes <run_dir>/model.
UniversalRun train_universal(const DatasetSuite& suite, const RunConfig& cfg,
                             const std::map<std::string, SingleTaskModel>& teachers,
                             const std::filesystem::path& run_dir);

struct TaskGroup {
  std::string id;
  std::vector<std::string> members;
  std::filesystem::path checkpoint;
};

/// Random partition into `n_groups` non-empty groups of near-equal size; an
/// anchor task forms its own singleton group.
std::vector<TaskGroup> plan_groups(const std::vector<std::string>& task_ids, int n_groups, std::uint64_t seed,
                                   const std::optional<std::string>& anchor = std::nullopt);

struct GroupedRun {
  std::vector<TaskGroup> groups;
  UniversalRun final_run;
};

/// Distills each group from its members' teachers, then the universal model
/// from the group models. Writes under <run_dir>/groups/<id> and
/// <run_dir>/final.
GroupedRun train_grouped(const DatasetSuite& suite, const RunConfig& cfg,
                         const std::map<std::string, SingleTaskModel>& teachers, std::vector<TaskGroup> groups,
                         const std::filesystem::path& run_dir);

/// Group model restricted to one member task, as a frozen teacher.
SingleTaskModel extract_task_model(const UniversalModel& model, const std::string& task);

/// Metric per task on a split (inference path, no adapters).
std::map<std::string, double> evaluate_universal(const DatasetSuite& suite, const UniversalModel& model, Split split,
                                                 int batch_size = 64);
double evaluate_single(const DatasetSuite& suite, const SingleTaskModel& model, Split split, int batch_size = 64);

/// Runs independent jobs with at most `jobs` concurrently; the first
/// exception is rethrown after all jobs finish.
void run_jobs(const std::vector<std::function<void()>>& work, int jobs);

/// Random horizontal flips of a batch, labels included (normals' x component
/// changes sign). Flipped labels are owned by the batch.
void flip_batch(Batch& batch, const DatasetSuite& suite, Rng& rng);

}  // namespace unirep
