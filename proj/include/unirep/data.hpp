#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unirep/tensor.hpp"

namespace unirep {

enum class TaskKind { dense, classification };
enum class TaskLoss { cross_entropy, l1, cosine_normals };
enum class TaskMetric { miou, abs_err, mean_angle_err, accuracy };

std::string to_string(TaskKind k);
std::string to_string(TaskLoss l);
std::string to_string(TaskMetric m);
TaskKind parse_task_kind(const std::string& s);
TaskLoss parse_task_loss(const std::string& s);
TaskMetric parse_task_metric(const std::string& s);

struct TaskSpec {
  std::string id;
  TaskKind kind = TaskKind::dense;
  int out_channels = 1;
  int out_height = 1;
  int out_width = 1;
  TaskLoss loss = TaskLoss::l1;
  TaskMetric metric = TaskMetric::abs_err;
  bool lower_is_better = true;

  /// Throws ConfigError when the declared kind, shape and loss disagree.
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

/// Integer labels (class masks, class ids) or float maps (depth, normals).
struct Label {
  std::vector<std::int32_t> ints;
  std::vector<float> floats;
};

struct LabeledSample {
  Tensor image;  // 3 x H x W in [0, 1]
  std::map<std::string, Label> labels;
  int domain = -1;       // mdl only
  int class_label = -1;  // global class id, mdl only
};

enum class SuiteMode { mtl, mdl };
enum class Split { train, val, test, meta_test };
std::string to_string(SuiteMode m);
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct DomainInfo {
  std::string task_id;  // empty for the withheld domain
  std::string style;
  int label_offset = 0;
  int n_train_classes = 0;
  int n_meta_classes = 0;
  bool withheld = false;
};

struct DatasetSuite {
  SuiteMode mode = SuiteMode::mtl;
  std::vector<TaskSpec> tasks;
  std::map<Split, std::vector<LabeledSample>> splits;
  std::uint64_t seed = 0;
  int image_size = 0;
  std::vector<DomainInfo> domains;  // mdl only; withheld domain last

  const TaskSpec& task(const std::string& id) const;
  int task_index(const std::string& id) const;
  /// Empty vector when the split is absent.
  const std::vector<LabeledSample>& split(Split s) const;
  /// Domain index whose task id is `id`, or -1.
  int domain_of_task(const std::string& id) const;
  int withheld_domain() const;
  /// Order-stable hash of every array in the suite.
  std::uint64_t content_hash() const;
};

// Dense toy suite constants.
inline constexpr int kSegClasses = 5;
/// Multiplier on the height-field gradient when forming surface normals.
inline constexpr double kReliefScale = 2.0;

DatasetSuite generate_dense_suite(std::uint64_t seed, int n_images, int hw);

struct DomainSuiteOptions {
  int image_size = 32;
  int meta_classes_per_domain = 5;  // held-out classes of each seen domain
  double train_fraction = 0.6;
  double val_fraction = 0.2;
};

DatasetSuite generate_domain_suite(std::uint64_t seed, int n_domains, int n_classes,
                                   int n_per_class, const DomainSuiteOptions& opts = {});

/// Height field of a dense-suite image, kept for label-consistency checks.
struct HeightField {
  int hw = 0;
  std::vector<double> height;  // hw*hw, in [0, 1]
  std::vector<double> du, dv;  // analytic partial derivatives
  std::vector<int> region;     // -1 background, else shape index (paint order)
};
/// Regenerates image `index` of the dense suite with `seed`.
HeightField dense_height_field(std::uint64_t seed, int index, int hw);

// --- batches -----------------------------------------------------------------

struct Batch {
  Tensor images;                                       // B x 3 x H x W
  std::vector<int> indices;                            // into the split
  std::map<std::string, std::vector<int>> task_rows;   // batch rows labelled for each task
  std::map<std::string, std::vector<const Label*>> labels;  // aligned with task_rows; points into the suite
  std::vector<std::shared_ptr<const Label>> owned_labels;  // storage for labels not owned by the suite
};

struct BatchOptions {
  Split split = Split::train;
  int batch_size = 16;
  std::uint64_t seed = 0;
  long epoch = 0;
  bool shuffle = true;
  /// mdl: task id receiving `anchor_share` of every batch.
  std::optional<std::string> anchor_task;
  double anchor_share = 0.5;
  /// Restricts the stream to samples labelled for this task.
  std::optional<std::string> only_task;
  /// mdl: domains mixed into each batch (all when empty).
  std::vector<std::string> task_subset;
};

/// Per-domain sample counts of one mixed batch: equal shares with the
/// remainder going to the lowest-indexed domains, or an anchor share.
std::vector<int> domain_quota(int n_domains, int batch_size, std::optional<int> anchor,
                              double anchor_share);

/// Single-pass, single-consumer iterator over one epoch. The order is a pure
/// function of (seed, epoch), so any epoch can be replayed independently.
class BatchStream {
 public:
  BatchStream(const DatasetSuite& suite, BatchOptions opts);
  std::optional<Batch> next();
  std::size_t batches_per_epoch() const { return plan_.size(); }

 private:
  const DatasetSuite* suite_;
  BatchOptions opts_;
  std::vector<std::vector<int>> plan_;
  std::size_t cursor_ = 0;
};

BatchStream make_batches(const DatasetSuite& suite, const BatchOptions& opts);

/// Stacks images of the given split rows into B x 3 x H x W.
Tensor stack_images(const std::vector<LabeledSample>& samples, std::span<const int> rows);
Batch make_batch(const DatasetSuite& suite, Split split, std::vector<int> rows);

nlohmann::json task_to_json(const TaskSpec& t);
TaskSpec task_from_json(const nlohmann::json& j);

// --- export ------------------------------------------------------------------

void export_suite(const DatasetSuite& suite, const std::filesystem::path& dir);
DatasetSuite import_suite(const std::filesystem::path& dir);

}  // namespace unirep
