#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

struct TaskResult {
  std::string task;
  double value = 0.0;
  bool lower_is_better = false;
};

/// Mean IoU over classes with a non-empty union.
double miou(std::span<const int> pred, std::span<const int> gt, int n_classes);
double abs_err(std::span<const float> pred, std::span<const float> gt);
/// Mean angle in degrees between 3-vectors stored as (x..., y..., z...) planes
/// of `pixels` entries each, one block per image.
double mean_angle_err(std::span<const float> pred, std::span<const float> gt, std::size_t pixels);
double accuracy(std::span<const int> pred, std::span<const int> gt);

/// Average signed relative change versus baselines, in percent; positive
/// means better than the baselines. Tasks are matched by id.
double delta_mtl(const std::vector<TaskResult>& results, const std::vector<TaskResult>& baselines);

/// Channel argmax of B x K x H x W (or B x K) logits.
std::vector<int> argmax_channels(const Tensor& logits);

/// Metric of one task over predictions aligned with `labels`.
double task_metric(const TaskSpec& task, const Tensor& pred, const std::vector<const Label*>& labels);

/// Incremental evaluation: collects predictions batch by batch.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(TaskSpec task) : task_(std::move(task)) {}
  void add(const Tensor& pred, const std::vector<const Label*>& labels);
  double value() const;
  const TaskSpec& task() const { return task_; }

 private:
  TaskSpec task_;
  std::vector<int> pred_ints_, gt_ints_;
  std::vector<float> pred_floats_, gt_floats_;
  std::size_t pixels_ = 0;
};

}  // namespace unirep
