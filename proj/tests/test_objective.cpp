#include <doctest.h>

#include <cmath>

#include "unirep/errors.hpp"
#include "unirep/objective.hpp"
#include "unirep/rng.hpp"
#include "unirep/task_losses.hpp"

using namespace unirep;

namespace {

struct Fixture {
  DatasetSuite suite = generate_dense_suite(11, 24, 16);
  EncoderSpec spec{EncoderMode::dense, 8, 5};
  std::map<std::string, SingleTaskModel> teacher_models;
  TeacherSet teachers;
  Batch batch;

  Fixture() {
    std::uint64_t k = 100;
    for (const auto& t : suite.tasks) teacher_models.emplace(t.id, SingleTaskModel(t, EncoderSpec{EncoderMode::dense, 8, ++k}));
    for (auto& [id, m] : teacher_models) {
      freeze_and_checksum(m);
      teachers[id] = &m;
    }
    batch = make_batch(suite, Split::train, {0, 1, 2, 3, 4, 5});
  }
};

void perturb(UniversalModel& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (Param* p : m.adapter_params())
    for (float& v : p->value.vec()) v += static_cast<float>(scale * rng.normal());
}

}  // namespace

TEST_CASE("vanilla objective equals the weighted sum of task losses") {
  Fixture f;
  UniversalModel student(f.suite.tasks, f.spec, AdapterKind::linear);
  DistillationConfig cfg = dense_preset();
  for (auto& [id, w] : cfg.weights) {
    w.feature.initial = 0.0;
    w.prediction.initial = 0.0;
  }
  cfg.weights["seg"].task = 0.5;
  cfg.weights["normals"].task = 3.0;
  const ObjectiveResult r = total_objective(f.batch, student, f.teachers, cfg, 0);

  const UniversalOutput out = forward_universal(student, f.batch.images, false);
  double expected = 0.0;
  for (const auto& t : f.suite.tasks) {
    const LossResult l = task_loss(t, out.predictions.at(t.id), f.batch.labels.at(t.id));
    expected += cfg.lambda_task(t.id) * l.value;
  }
  CHECK(r.total == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("student copies of the teachers give zero distillation") {
  Fixture f;
  // one teacher shared by all tasks; students encoder copies it
  UniversalModel student(f.suite.tasks, f.spec, AdapterKind::linear);
  const SingleTaskModel& src = f.teacher_models.at("seg");
  auto sp = student.encoder.params();
  auto tp = src.encoder.params();
  for (std::size_t i = 0; i < sp.size(); ++i) sp[i].param->value = tp[i].param->value;
  TeacherSet same;
  for (const auto& t : f.suite.tasks) same[t.id] = &src;
  DistillationConfig cfg = dense_preset();
  for (auto& [id, w] : cfg.weights) w.task = 0.0;
  const ObjectiveResult r = total_objective(f.batch, student, same, cfg, 0);
  CHECK(std::abs(r.total) <= 1e-6);
}

TEST_CASE("objective gradient matches a directional finite difference") {
  Fixture f;
  UniversalModel student(f.suite.tasks, f.spec, AdapterKind::linear);
  perturb(student, 0.05, 3);
  const DistillationConfig cfg = dense_preset();
  const TeacherBatch tb = teacher_outputs(f.teachers, f.batch, cfg, student.task_ids());

  auto params = student.params();
  for (auto& p : params) p.param->zero_grad();
  ObjectiveGradients g = objective_backward(f.batch, student, tb, cfg, 0);
  Tensor df = g.distill_feature_grad;
  for (const auto& [t, d] : g.task_feature_grads) df += d;
  student.encoder.backward(g.encoder_cache, df);

  Rng rng(9);
  std::vector<std::vector<float>> dir;
  double analytic = 0.0;
  for (auto& p : params) {
    std::vector<float> d(p.param->value.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] = static_cast<float>(rng.normal());
      analytic += static_cast<double>(d[i]) * p.param->grad[i];
    }
    dir.push_back(std::move(d));
  }
  auto shifted = [&](double h) {
    UniversalModel m = student;
    auto mp = m.params();
    for (std::size_t k = 0; k < mp.size(); ++k)
      for (std::size_t i = 0; i < dir[k].size(); ++i) mp[k].param->value[i] += static_cast<float>(h * dir[k][i]);
    return total_objective(f.batch, m, tb, cfg, 0).total;
  };
  const double h = 1e-3;
  const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
  CHECK(numeric == doctest::Approx(analytic).epsilon(2e-2));
}

TEST_CASE("per-task feature gradients only involve that task") {
  Fixture f;
  UniversalModel student(f.suite.tasks, f.spec, AdapterKind::linear);
  DistillationConfig cfg = dense_preset();
  cfg.weights["depth"].task = 0.0;
  const TeacherBatch tb = teacher_outputs(f.teachers, f.batch, cfg, student.task_ids());
  ObjectiveGradients g = objective_backward(f.batch, student, tb, cfg, 0);
  REQUIRE(g.task_feature_grads.count("depth") == 1);
  double n = 0.0;
  for (float v : g.task_feature_grads.at("depth").vec()) n += std::abs(v);
  CHECK(n == 0.0);
  double m = 0.0;
  for (float v : g.distill_feature_grad.vec()) m += std::abs(v);
  CHECK(m > 0.0);
}

TEST_CASE("missing teacher is a config error") {
  Fixture f;
  TeacherSet partial{{"seg", f.teachers.at("seg")}};
  CHECK_THROWS_AS(teacher_outputs(partial, f.batch, dense_preset(), {"seg", "depth", "normals"}), ConfigError);
}
