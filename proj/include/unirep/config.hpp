#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unirep/data.hpp"
#include "unirep/fewshot.hpp"
#include "unirep/trainer.hpp"

namespace unirep {

struct SuiteConfig {
  std::string kind = "dense";  // dense | domains
  int n_images = 2000;
  int image_size = 32;
  int n_domains = 4;
  int n_classes = 10;
  int n_per_class = 30;
  int meta_classes_per_domain = 5;
};

/// Distillation block as written; task-specific presets are resolved once
/// the suite is known.
struct DistillSettings {
  std::string preset = "auto";  // auto | dense | domains | none
  std::optional<std::string> feature_loss;
  std::optional<std::string> prediction_loss;
  double bandwidth_frac = kDefaultBandwidthFrac;
  double domain_weight = 1.0;
  double anchor_weight = 4.0;
  long anneal_iterations = 0;  // 0 disables annealing
  nlohmann::json weights = nlohmann::json::object();
  std::vector<double> sweep;
};

struct ExperimentConfig {
  nlohmann::json document;  // fully materialized, defaults included
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  SuiteConfig suite;
  RunConfig run;
  int teacher_epochs = 0;
  DistillSettings distill;
  int n_groups = 2;
  std::optional<std::string> group_anchor;
  FewShotOptions fewshot;
  std::vector<int> retrieval_ks;
  std::optional<std::string> eval_anchor;
};

/// Every key with its default value.
nlohmann::json default_config_document();

/// Merges `user` over the defaults. Unknown keys and type mismatches raise
/// ConfigError naming the key path (e.g. "train.optimizer.lr").
nlohmann::json materialize_config(const nlohmann::json& user);
ExperimentConfig config_from_document(const nlohmann::json& materialized);

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<int> jobs;
};

/// Reads the JSON file (defaults only when `path` is empty), applies flag
/// overrides and the UNIREP_OUT_ROOT environment variable, which relocates
/// relative output directories.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path, const ConfigOverrides& overrides = {});

/// Distillation config for `suite` from the settings block.
DistillationConfig resolve_distillation(const DistillSettings& s, const DatasetSuite& suite,
                                        const std::optional<std::string>& anchor);

}  // namespace unirep
