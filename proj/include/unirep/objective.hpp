#pragma once

#include <map>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/distill.hpp"
#include "unirep/models.hpp"

namespace unirep {

/// Frozen-teacher activations for the rows of one task in a batch
/// (row order follows Batch::task_rows).
struct TeacherOutputs {
  Tensor feature;
  Tensor prediction;
};
using TeacherBatch = std::map<std::string, TeacherOutputs>;

using TeacherSet = std::map<std::string, const SingleTaskModel*>;

/// Evaluates every teacher the config needs on its task's rows of `batch`.
/// Missing teachers raise ConfigError.
TeacherBatch teacher_outputs(const TeacherSet& teachers, const Batch& batch, const DistillationConfig& cfg,
                             const std::vector<std::string>& task_ids);

struct TermValue {
  std::string task;
  std::string term;  // "task", "feature", "prediction"
  double value = 0.0;   // unweighted loss
  double weight = 0.0;  // multiplier applied in the total
};

struct ObjectiveResult {
  double total = 0.0;
  std::vector<TermValue> terms;

  /// Unweighted value of one term; throws if absent.
  double value(const std::string& task, const std::string& term) const;
  /// Unweighted task losses keyed by task id.
  std::map<std::string, double> task_losses() const;
};

/// Optional multipliers on lambda^t (from a loss balancer); absent tasks use 1.
using TaskScale = std::map<std::string, double>;

/// Sum over tasks of weighted task, feature-distillation and
/// prediction-distillation losses. Each task's terms use only its own rows of
/// the batch. Non-finite terms raise NumericalError naming the term.
ObjectiveResult total_objective(const Batch& batch, const UniversalModel& student, const TeacherBatch& teachers,
                                const DistillationConfig& cfg, long iter, const TaskScale* scale = nullptr);
ObjectiveResult total_objective(const Batch& batch, const UniversalModel& student, const TeacherSet& teachers,
                                const DistillationConfig& cfg, long iter, const TaskScale* scale = nullptr);

/// Forward plus backward of the objective. Decoder and adapter gradients are
/// accumulated into the model; gradients with respect to the shared feature
/// are returned split by origin so the caller can run gradient surgery
/// before the encoder backward pass.
struct ObjectiveGradients {
  ObjectiveResult result;
  /// Per task: weighted task loss plus prediction distillation.
  std::map<std::string, Tensor> task_feature_grads;
  /// Sum of all feature-distillation terms (through the adapters).
  Tensor distill_feature_grad;
  SequentialCache encoder_cache;
};

ObjectiveGradients objective_backward(const Batch& batch, UniversalModel& student, const TeacherBatch& teachers,
                                      const DistillationConfig& cfg, long iter, const TaskScale* scale = nullptr);

}  // namespace unirep
