#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "unirep/config.hpp"
#include "unirep/errors.hpp"

using namespace unirep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string config_error(const json& user) {
  try {
    materialize_config(user);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults materialize into a complete config") {
  const json doc = materialize_config(json::object());
  CHECK(doc == default_config_document());
  const ExperimentConfig c = config_from_document(doc);
  CHECK(c.suite.kind == "dense");
  CHECK(c.suite.n_images == 2000);
  CHECK(c.suite.image_size == 32);
  CHECK(c.run.adapter == AdapterKind::linear);
  CHECK(c.run.adapter_optim.lr == doctest::Approx(0.01));
  CHECK(c.run.adapter_optim.weight_decay == doctest::Approx(1e-4));
  CHECK(c.run.adapter_optim.schedule == LrSchedule::cosine);
  CHECK(c.fewshot.adapt_options.steps == 40);
  CHECK(c.fewshot.adapt_options.lr == doctest::Approx(0.1));
  CHECK(c.fewshot.episodes == 100);
  CHECK(c.teacher_epochs == c.run.epochs);
  CHECK(c.retrieval_ks == std::vector<int>{1, 5, 10});
}

TEST_CASE("user values override defaults") {
  const json user = {{"seed", 9},
                     {"train", {{"epochs", 3}, {"optimizer", {{"lr", 0.05}}}}},
                     {"teachers", {{"epochs", 5}}},
                     {"balancer", "uncertainty"},
                     {"distill", {{"weights", {{"normals", {{"feature", 0.5}}}}}}}};
  const ExperimentConfig c = config_from_document(materialize_config(user));
  CHECK(c.seed == 9);
  CHECK(c.run.epochs == 3);
  CHECK(c.run.main.lr == doctest::Approx(0.05));
  CHECK(c.run.main.kind == OptimizerKind::adam);
  CHECK(c.teacher_epochs == 5);
  CHECK(c.run.balancer == BalancerKind::uncertainty);
  const DatasetSuite s = generate_dense_suite(1, 6, 16);
  const DistillationConfig d = resolve_distillation(c.distill, s, std::nullopt);
  CHECK(d.lambda_feature("normals", 0) == 0.5);
  CHECK(d.lambda_feature("seg", 0) == 1.0);
  CHECK(d.lambda_task("normals") == 1.0);
}

TEST_CASE("unknown keys and type errors name the key path") {
  CHECK(config_error({{"trian", 1}}).find("'trian'") != std::string::npos);
  CHECK(config_error({{"train", {{"optimizer", {{"momentm", 1}}}}}}).find("train.optimizer.momentm") != std::string::npos);
  CHECK(config_error({{"train", {{"epochs", "many"}}}}).find("train.epochs") != std::string::npos);
  CHECK(config_error({{"distill", {{"weights", {{"seg", {{"feture", 1}}}}}}}}).find("distill.weights.seg.feture") !=
        std::string::npos);
  CHECK_FALSE(config_error({{"train", {{"anchor_task", "domain0"}}}}).size());
}

TEST_CASE("value errors surface as config errors") {
  CHECK_THROWS_AS(config_from_document(materialize_config({{"balancer", "gradnorm2"}})), ConfigError);
  CHECK_THROWS_AS(config_from_document(materialize_config({{"model", {{"adapter", "cubic"}}}})), ConfigError);
  const ExperimentConfig c = config_from_document(materialize_config({{"distill", {{"preset", "fancy"}}}}));
  CHECK_THROWS_AS(resolve_distillation(c.distill, generate_dense_suite(1, 6, 16), std::nullopt), ConfigError);
  const ExperimentConfig w = config_from_document(materialize_config({{"distill", {{"weights", {{"nope", json::object()}}}}}}));
  CHECK_THROWS_AS(resolve_distillation(w.distill, generate_dense_suite(1, 6, 16), std::nullopt), ConfigError);
}

TEST_CASE("presets resolve against the suite") {
  const ExperimentConfig c = config_from_document(default_config_document());
  const DistillationConfig dense = resolve_distillation(c.distill, generate_dense_suite(1, 6, 16), std::nullopt);
  CHECK(dense.feature_loss == FeatureLoss::norm_l2);
  CHECK(dense.lambda_feature("normals", 0) == 2.0);
  const DatasetSuite dom = generate_domain_suite(1, 3, 5, 6);
  const DistillationConfig md = resolve_distillation(c.distill, dom, std::string("domain0"));
  CHECK(md.feature_loss == FeatureLoss::cka_rbf);
  CHECK(md.prediction_loss == PredictionLoss::kl);
  CHECK(md.lambda_feature("domain0", 0) == 4.0);
  CHECK(md.lambda_prediction("domain1", 0) == 1.0);
  const ExperimentConfig an = config_from_document(materialize_config({{"distill", {{"anneal_iterations", 100}}}}));
  const DistillationConfig a = resolve_distillation(an.distill, dom, std::nullopt);
  CHECK(a.lambda_feature("domain1", 50) == doctest::Approx(0.5));
  CHECK(a.lambda_feature("domain1", 100) == 0.0);
}

TEST_CASE("load_config applies overrides and the output-root variable") {
  const fs::path dir = fs::temp_directory_path() / "unirep_test_config";
  fs::create_directories(dir);
  const fs::path file = dir / "c.json";
  std::ofstream(file) << R"({"seed": 4, "out_dir": "runs/x"})";
  ::unsetenv("UNIREP_OUT_ROOT");
  ExperimentConfig c = load_config(file);
  CHECK(c.seed == 4);
  CHECK(c.out_dir == fs::path("runs/x"));
  CHECK(c.run.out_dir == c.out_dir);
  ConfigOverrides o;
  o.seed = 11;
  o.jobs = 2;
  ::setenv("UNIREP_OUT_ROOT", dir.c_str(), 1);
  c = load_config(file, o);
  CHECK(c.seed == 11);
  CHECK(c.run.jobs == 2);
  CHECK(c.out_dir == dir / "runs/x");
  o.out_dir = "/abs/place";
  CHECK(load_config(file, o).out_dir == fs::path("/abs/place"));
  ::unsetenv("UNIREP_OUT_ROOT");
  std::ofstream(file) << "{ not json";
  CHECK_THROWS(load_config(file));
  CHECK_THROWS(load_config(dir / "missing.json"));
  fs::remove_all(dir);
}
