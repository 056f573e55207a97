#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unirep/config.hpp"
#include "unirep/report.hpp"

namespace unirep {

DatasetSuite generate_suite(const SuiteConfig& cfg, std::uint64_t seed);
/// The suite written by gen-data under <out>/suite (hash verified).
DatasetSuite load_suite_artifact(const std::filesystem::path& out_dir);

/// RunConfig of one stage with the distillation block resolved for `suite`.
RunConfig run_config_for(const ExperimentConfig& cfg, const DatasetSuite& suite, Stage stage);

/// Encoder features (B x C, pooled for dense encoders) of every sample in a split.
Matrix split_features(const Encoder& enc, const DatasetSuite& suite, Split split, int batch_size = 64);

/// Test-split results of every trained model in the output directory,
/// teachers as the baseline row.
ResultsTable evaluate_mtl(const ExperimentConfig& cfg, const DatasetSuite& suite);

// Command entry points. Each writes artifacts under cfg.out_dir and prints a
// short summary.
void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out);
void cmd_train_teachers(const ExperimentConfig& cfg, std::ostream& out);
void cmd_train_universal(const ExperimentConfig& cfg, bool vanilla, std::ostream& out);
void cmd_train_groups(const ExperimentConfig& cfg, std::ostream& out);
void cmd_eval_mtl(const ExperimentConfig& cfg, std::ostream& out);
void cmd_eval_fewshot(const ExperimentConfig& cfg, std::ostream& out);
void cmd_eval_retrieval(const ExperimentConfig& cfg, std::ostream& out);
/// Tables and plots from an output directory, or only the fixture table
/// when `fixture` is given.
void cmd_report(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& fixture, std::ostream& out);

/// Snapshot of the materialized config written by every command.
void write_config_snapshot(const ExperimentConfig& cfg);

}  // namespace unirep
