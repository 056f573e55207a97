#include "unirep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unirep/errors.hpp"

namespace unirep {

double miou(std::span<const int> pred, std::span<const int> gt, int n_classes) {
  if (pred.size() != gt.size()) throw ShapeError("miou: prediction and ground truth sizes differ");
  if (n_classes < 1) throw ConfigError("miou: n_classes must be positive");
  std::vector<long> inter(static_cast<std::size_t>(n_classes), 0), uni(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= n_classes || g < 0 || g >= n_classes) throw ConfigError("miou: label out of range");
    if (p == g) {
      ++inter[static_cast<std::size_t>(p)];
      ++uni[static_cast<std::size_t>(p)];
    } else {
      ++uni[static_cast<std::size_t>(p)];
      ++uni[static_cast<std::size_t>(g)];
    }
  }
  double sum = 0.0;
  int counted = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (uni[static_cast<std::size_t>(c)] == 0) continue;
    sum += static_cast<double>(inter[static_cast<std::size_t>(c)]) / static_cast<double>(uni[static_cast<std::size_t>(c)]);
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / counted;
}

double abs_err(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size()) throw ShapeError("abs_err: sizes differ");
  if (pred.empty()) throw ShapeError("abs_err: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(static_cast<double>(pred[i]) - gt[i]);
  return s / static_cast<double>(pred.size());
}

double mean_angle_err(std::span<const float> pred, std::span<const float> gt, std::size_t pixels) {
  if (pred.size() != gt.size()) throw ShapeError("mean_angle_err: sizes differ");
  if (pixels == 0 || pred.empty() || pred.size() % (3 * pixels) != 0) throw ShapeError("mean_angle_err: bad layout");
  const std::size_t images = pred.size() / (3 * pixels);
  double sum = 0.0;
  for (std::size_t n = 0; n < images; ++n) {
    const std::size_t base = n * 3 * pixels;
    for (std::size_t p = 0; p < pixels; ++p) {
      double pp = 0, gg = 0, pg = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = pred[base + c * pixels + p], b = gt[base + c * pixels + p];
        pp += a * a;
        gg += b * b;
        pg += a * b;
      }
      if (pp == 0.0 || gg == 0.0) throw NumericalError("mean_angle_err: zero normal vector", "metric/normals");
      const double cos = std::clamp(pg / std::sqrt(pp * gg), -1.0, 1.0);
      sum += std::acos(cos) * 180.0 / std::numbers::pi;
    }
  }
  return sum / static_cast<double>(images * pixels);
}

double accuracy(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) throw ShapeError("accuracy: sizes differ");
  if (pred.empty()) throw ShapeError("accuracy: empty input");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == gt[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

double delta_mtl(const std::vector<TaskResult>& results, const std::vector<TaskResult>& baselines) {
  if (results.empty()) throw ConfigError("delta_mtl: no tasks");
  if (results.size() != baselines.size()) throw ConfigError("delta_mtl: task sets differ");
  double sum = 0.0;
  for (const auto& r : results) {
    const auto it = std::find_if(baselines.begin(), baselines.end(), [&](const TaskResult& b) { return b.task == r.task; });
    if (it == baselines.end()) throw ConfigError("delta_mtl: no baseline for task '" + r.task + "'");
    if (it->value == 0.0) throw NumericalError("delta_mtl: zero baseline for task '" + r.task + "'", r.task + "/baseline");
    const double rel = (r.value - it->value) / it->value;
    sum += r.lower_is_better ? -rel : rel;
  }
  return 100.0 * sum / static_cast<double>(results.size());
}

std::vector<int> argmax_channels(const Tensor& logits) {
  int rows = logits.dim(0), ch = logits.dim(1);
  std::size_t plane = logits.rank() == 4 ? static_cast<std::size_t>(logits.dim(2)) * logits.dim(3) : 1;
  std::vector<int> out(static_cast<std::size_t>(rows) * plane);
  for (int n = 0; n < rows; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      float bv = logits[(static_cast<std::size_t>(n) * ch) * plane + p];
      for (int c = 1; c < ch; ++c) {
        const float v = logits[(static_cast<std::size_t>(n) * ch + c) * plane + p];
        if (v > bv) {
          bv = v;
          best = c;
        }
      }
      out[static_cast<std::size_t>(n) * plane + p] = best;
    }
  }
  return out;
}

void MetricAccumulator::add(const Tensor& pred, const std::vector<const Label*>& labels) {
  if (static_cast<std::size_t>(pred.dim(0)) != labels.size()) throw ShapeError("metric: label count mismatch");
  switch (task_.metric) {
    case TaskMetric::miou:
    case TaskMetric::accuracy: {
      const auto am = argmax_channels(pred);
      pred_ints_.insert(pred_ints_.end(), am.begin(), am.end());
      for (const Label* l : labels) gt_ints_.insert(gt_ints_.end(), l->ints.begin(), l->ints.end());
      if (pred_ints_.size() != gt_ints_.size()) throw ShapeError("metric: label size mismatch");
      break;
    }
    case TaskMetric::abs_err:
    case TaskMetric::mean_angle_err:
      pred_floats_.insert(pred_floats_.end(), pred.vec().begin(), pred.vec().end());
      for (const Label* l : labels) gt_floats_.insert(gt_floats_.end(), l->floats.begin(), l->floats.end());
      if (pred_floats_.size() != gt_floats_.size()) throw ShapeError("metric: label size mismatch");
      pixels_ = pred.rank() == 4 ? static_cast<std::size_t>(pred.dim(2)) * pred.dim(3) : 1;
      break;
  }
}

double MetricAccumulator::value() const {
  switch (task_.metric) {
    case TaskMetric::miou: return miou(pred_ints_, gt_ints_, task_.out_channels);
    case TaskMetric::accuracy: return accuracy(pred_ints_, gt_ints_);
    case TaskMetric::abs_err: return abs_err(pred_floats_, gt_floats_);
    case TaskMetric::mean_angle_err: return mean_angle_err(pred_floats_, gt_floats_, pixels_);
  }
  throw ConfigError("unhandled metric");
}

double task_metric(const TaskSpec& task, const Tensor& pred, const std::vector<const Label*>& labels) {
  MetricAccumulator acc(task);
  acc.add(pred, labels);
  return acc.value();
}

}  // namespace unirep
