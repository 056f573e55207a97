#pragma once

#include <vector>

#include "unirep/data.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

/// Loss value and its gradient with respect to the prediction.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

/// Task loss of `pred` (B x O x H x W dense, B x O classification) against
/// one label per row. All losses are means over rows (and pixels).
LossResult task_loss(const TaskSpec& task, const Tensor& pred, const std::vector<const Label*>& labels);

/// Mean absolute difference; gradient with respect to `pred`.
LossResult mean_abs_diff(const Tensor& pred, const Tensor& target);

/// Mean over pixels of 1 - cos(pred, target) along the channel axis.
LossResult mean_cosine_distance(const Tensor& pred, const Tensor& target);

}  // namespace unirep
