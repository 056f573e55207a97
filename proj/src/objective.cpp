#include "unirep/objective.hpp"

#include <cmath>

#include "unirep/errors.hpp"
#include "unirep/task_losses.hpp"

namespace unirep {

double ObjectiveResult::value(const std::string& task, const std::string& term) const {
  for (const auto& t : terms)
    if (t.task == task && t.term == term) return t.value;
  throw ConfigError("objective has no term " + task + "/" + term);
}

std::map<std::string, double> ObjectiveResult::task_losses() const {
  std::map<std::string, double> out;
  for (const auto& t : terms)
    if (t.term == "task") out[t.task] = t.value;
  return out;
}

TeacherBatch teacher_outputs(const TeacherSet& teachers, const Batch& batch, const DistillationConfig& cfg,
                             const std::vector<std::string>& task_ids) {
  TeacherBatch out;
  for (const auto& id : task_ids) {
    if (!cfg.needs_teacher(id)) continue;
    const auto rows = batch.task_rows.find(id);
    if (rows == batch.task_rows.end()) continue;
    const auto it = teachers.find(id);
    if (it == teachers.end() || it->second == nullptr) throw ConfigError("no teacher for task '" + id + "'");
    const Tensor x = batch.images.gather_rows(rows->second);
    TeacherOutputs t;
    t.feature = it->second->encoder.forward(x);
    t.prediction = it->second->decoder.forward(t.feature);
    out.emplace(id, std::move(t));
  }
  return out;
}

namespace {

void require_finite(double v, const std::string& task, const std::string& term) {
  if (!std::isfinite(v)) throw NumericalError("non-finite " + term + " loss for task '" + task + "'", task + "/" + term);
}

const TeacherOutputs& teacher_for(const TeacherBatch& teachers, const std::string& task) {
  const auto it = teachers.find(task);
  if (it == teachers.end()) throw ConfigError("no teacher outputs for task '" + task + "'");
  return it->second;
}

double scale_of(const TaskScale* scale, const std::string& task) {
  if (scale == nullptr) return 1.0;
  const auto it = scale->find(task);
  return it == scale->end() ? 1.0 : it->second;
}

/// Shared forward/backward walk. With `grads` null only values are computed.
ObjectiveResult run(const Batch& batch, const UniversalModel& student, UniversalModel* mutable_student,
                    const TeacherBatch& teachers, const DistillationConfig& cfg, long iter, const TaskScale* scale,
                    ObjectiveGradients* grads) {
  if (student.task_ids().empty()) throw ConfigError("student has no tasks");
  ObjectiveResult res;
  const bool backward = grads != nullptr;
  const Tensor feature = student.encoder.forward(batch.images, backward ? &grads->encoder_cache : nullptr);
  if (backward) grads->distill_feature_grad = Tensor(feature.shape());

  for (const auto& task : student.tasks()) {
    const auto rows_it = batch.task_rows.find(task.id);
    if (rows_it == batch.task_rows.end() || rows_it->second.empty()) continue;
    const auto& rows = rows_it->second;
    const Tensor f = feature.gather_rows(rows);
    Tensor d_feature_task(f.shape());

    // Task loss and prediction distillation share the decoder pass.
    SequentialCache dec_cache;
    const Decoder& dec = student.decoders.at(task.id);
    const Tensor pred = dec.forward(f, backward ? &dec_cache : nullptr);
    const double wt = cfg.lambda_task(task.id) * scale_of(scale, task.id);
    const LossResult tl = task_loss(task, pred, batch.labels.at(task.id));
    require_finite(tl.value, task.id, "task");
    res.terms.push_back({task.id, "task", tl.value, wt});
    res.total += wt * tl.value;
    Tensor d_pred = tl.grad;
    d_pred *= static_cast<float>(wt);

    const double wp = cfg.lambda_prediction(task.id, iter);
    if (wp > 0.0) {
      const TeacherOutputs& t = teacher_for(teachers, task.id);
      const GradResult pl = prediction_distill_loss(task, cfg.prediction_loss, FeatureBatch::from_tensor(pred),
                                                    FeatureBatch::from_tensor(t.prediction));
      require_finite(pl.value, task.id, "prediction");
      res.terms.push_back({task.id, "prediction", pl.value, wp});
      res.total += wp * pl.value;
      if (backward) {
        for (std::size_t i = 0; i < d_pred.size(); ++i) d_pred[i] += static_cast<float>(wp * pl.grad[i]);
      }
    }
    if (backward) {
      d_feature_task = mutable_student->decoders.at(task.id).backward(dec_cache, d_pred);
      Tensor full(feature.shape());
      full.scatter_add_rows(rows, d_feature_task);
      grads->task_feature_grads.emplace(task.id, std::move(full));
    }

    const double wf = cfg.lambda_feature(task.id, iter);
    if (wf > 0.0) {
      const TeacherOutputs& t = teacher_for(teachers, task.id);
      SequentialCache ad_cache;
      const Adapter& ad = student.adapters.at(task.id);
      const Tensor adapted = ad.forward(f, backward ? &ad_cache : nullptr);
      const GradResult fl = feature_loss(cfg.feature_loss, FeatureBatch::from_tensor(adapted),
                                         FeatureBatch::from_tensor(t.feature), cfg.bandwidth_frac);
      require_finite(fl.value, task.id, "feature");
      res.terms.push_back({task.id, "feature", fl.value, wf});
      res.total += wf * fl.value;
      if (backward) {
        Tensor d_adapted(adapted.shape());
        for (std::size_t i = 0; i < d_adapted.size(); ++i) d_adapted[i] = static_cast<float>(wf * fl.grad[i]);
        const Tensor d_f = mutable_student->adapters.at(task.id).backward(ad_cache, d_adapted);
        grads->distill_feature_grad.scatter_add_rows(rows, d_f);
      }
    }
  }
  if (!std::isfinite(res.total)) throw NumericalError("non-finite total objective", "total");
  return res;
}

}  // namespace

ObjectiveResult total_objective(const Batch& batch, const UniversalModel& student, const TeacherBatch& teachers,
                                const DistillationConfig& cfg, long iter, const TaskScale* scale) {
  return run(batch, student, nullptr, teachers, cfg, iter, scale, nullptr);
}

ObjectiveResult total_objective(const Batch& batch, const UniversalModel& student, const TeacherSet& teachers,
                                const DistillationConfig& cfg, long iter, const TaskScale* scale) {
  return total_objective(batch, student, teacher_outputs(teachers, batch, cfg, student.task_ids()), cfg, iter, scale);
}

ObjectiveGradients objective_backward(const Batch& batch, UniversalModel& student, const TeacherBatch& teachers,
                                      const DistillationConfig& cfg, long iter, const TaskScale* scale) {
  ObjectiveGradients g;
  g.result = run(batch, student, &student, teachers, cfg, iter, scale, &g);
  return g;
}

}  // namespace unirep
