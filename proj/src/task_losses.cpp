#include "unirep/task_losses.hpp"

#include <algorithm>
#include <cmath>

#include "unirep/errors.hpp"

namespace unirep {

namespace {

constexpr double kEps = 1e-12;

/// (rows, channels, positions) view of a prediction tensor.
struct Layout {
  int rows, channels;
  std::size_t plane;
};

Layout layout_of(const Tensor& t) {
  if (t.rank() == 2) return {t.dim(0), t.dim(1), 1};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), static_cast<std::size_t>(t.dim(2)) * t.dim(3)};
  throw ShapeError("prediction must be rank 2 or 4, got " + shape_str(t.shape()));
}

inline std::size_t at(const Layout& l, int n, int c, std::size_t p) {
  return (static_cast<std::size_t>(n) * l.channels + c) * l.plane + p;
}

LossResult cross_entropy(const Tensor& pred, const std::vector<const Label*>& labels) {
  const Layout l = layout_of(pred);
  LossResult r{0.0, Tensor(pred.shape())};
  const double count = static_cast<double>(l.rows) * l.plane;
  std::vector<double> prob(static_cast<std::size_t>(l.channels));
  for (int n = 0; n < l.rows; ++n) {
    const auto& y = labels[static_cast<std::size_t>(n)]->ints;
    if (y.size() != l.plane) throw ShapeError("label size does not match prediction");
    for (std::size_t p = 0; p < l.plane; ++p) {
      const int target = y[p];
      if (target < 0 || target >= l.channels) throw ConfigError("class label out of range");
      double mx = -1e300;
      for (int c = 0; c < l.channels; ++c) mx = std::max(mx, static_cast<double>(pred[at(l, n, c, p)]));
      double z = 0.0;
      for (int c = 0; c < l.channels; ++c) {
        prob[static_cast<std::size_t>(c)] = std::exp(pred[at(l, n, c, p)] - mx);
        z += prob[static_cast<std::size_t>(c)];
      }
      r.value += -(pred[at(l, n, target, p)] - mx - std::log(z));
      for (int c = 0; c < l.channels; ++c) {
        const double g = prob[static_cast<std::size_t>(c)] / z - (c == target ? 1.0 : 0.0);
        r.grad[at(l, n, c, p)] = static_cast<float>(g / count);
      }
    }
  }
  r.value /= count;
  return r;
}

Tensor stack_float_labels(const Tensor& pred, const std::vector<const Label*>& labels) {
  Tensor t(pred.shape());
  const std::size_t per = pred.row_size();
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& f = labels[n]->floats;
    if (f.size() != per) throw ShapeError("label size does not match prediction");
    std::copy(f.begin(), f.end(), t.vec().begin() + static_cast<std::ptrdiff_t>(n * per));
  }
  return t;
}

}  // namespace

LossResult mean_abs_diff(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "l1 loss");
  LossResult r{0.0, Tensor(pred.shape())};
  const double count = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    r.value += std::abs(d);
    r.grad[i] = static_cast<float>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / count);
  }
  r.value /= count;
  return r;
}

LossResult mean_cosine_distance(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "cosine loss");
  const Layout l = layout_of(pred);
  LossResult r{0.0, Tensor(pred.shape())};
  const double count = static_cast<double>(l.rows) * l.plane;
  for (int n = 0; n < l.rows; ++n) {
    for (std::size_t p = 0; p < l.plane; ++p) {
      double pp = 0, tt = 0, pt = 0;
      for (int c = 0; c < l.channels; ++c) {
        const double a = pred[at(l, n, c, p)], b = target[at(l, n, c, p)];
        pp += a * a;
        tt += b * b;
        pt += a * b;
      }
      const double np = std::max(std::sqrt(pp), kEps), nt = std::max(std::sqrt(tt), kEps);
      const double cos = pt / (np * nt);
      r.value += 1.0 - cos;
      for (int c = 0; c < l.channels; ++c) {
        const double a = pred[at(l, n, c, p)] / np, b = target[at(l, n, c, p)] / nt;
        r.grad[at(l, n, c, p)] = static_cast<float>(-(b - a * cos) / np / count);
      }
    }
  }
  r.value /= count;
  return r;
}

LossResult task_loss(const TaskSpec& task, const Tensor& pred, const std::vector<const Label*>& labels) {
  const Layout l = layout_of(pred);
  if (static_cast<std::size_t>(l.rows) != labels.size()) {
    throw ShapeError("task '" + task.id + "': " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(l.rows) + " predictions");
  }
  if (l.channels != task.out_channels) {
    throw ShapeError("task '" + task.id + "': prediction has " + std::to_string(l.channels) + " channels");
  }
  switch (task.loss) {
    case TaskLoss::cross_entropy: return cross_entropy(pred, labels);
    case TaskLoss::l1: return mean_abs_diff(pred, stack_float_labels(pred, labels));
    case TaskLoss::cosine_normals: return mean_cosine_distance(pred, stack_float_labels(pred, labels));
  }
  throw ConfigError("unhandled task loss");
}

}  // namespace unirep
