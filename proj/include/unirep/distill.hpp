#pragma once

#include <map>
#include <string>
#include <vector>

#include "unirep/data.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

/// Double-precision activation batch: B x C x H x W (H = W = 1 for vectors).
struct FeatureBatch {
  std::vector<double> data;
  int batch = 0, channels = 0, height = 1, width = 1;

  FeatureBatch() = default;
  FeatureBatch(int b, int c, int h = 1, int w = 1);
  FeatureBatch(std::vector<double> values, int b, int c, int h = 1, int w = 1);
  static FeatureBatch from_tensor(const Tensor& t);
  Tensor to_tensor(const Shape& shape) const;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t row_size() const { return static_cast<std::size_t>(channels) * plane(); }
  bool same_shape(const FeatureBatch& o) const {
    return batch == o.batch && channels == o.channels && height == o.height && width == o.width;
  }
  double& at(int n, int c, std::size_t p) { return data[(static_cast<std::size_t>(n) * channels + c) * plane() + p]; }
  double at(int n, int c, std::size_t p) const { return data[(static_cast<std::size_t>(n) * channels + c) * plane() + p]; }
};

/// Loss value and its gradient with respect to the first (student) argument.
/// The second argument is always treated as a constant target.
struct GradResult {
  double value = 0.0;
  std::vector<double> grad;
};

inline constexpr double kNormEps = 1e-12;

/// Per-location L2-normalized squared distance, summed over c, h, w and
/// averaged over the batch.
GradResult norm_l2_feature_loss(const FeatureBatch& m, const FeatureBatch& s);
/// Mean over batch and locations of 1 - cos(m, s) along channels.
GradResult cosine_feature_loss(const FeatureBatch& m, const FeatureBatch& s);
/// Squared L2 distance between L2-normalized channel-mean spatial maps,
/// averaged over the batch.
GradResult attention_transfer_loss(const FeatureBatch& m, const FeatureBatch& s);

/// Rows x cols double matrix, row-major.
struct Matrix {
  int rows = 0, cols = 0;
  std::vector<double> data;
  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::vector<double> d);
  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
  /// Flattens every row of a feature batch (C*H*W columns).
  static Matrix from_features(const FeatureBatch& f);
};

inline constexpr double kDefaultBandwidthFrac = 0.5;
inline constexpr double kCkaDenominatorFloor = 1e-12;

/// RBF kernel bandwidth: frac * median pairwise Euclidean row distance,
/// or 1 when that median is zero.
double rbf_bandwidth(const Matrix& x, double bandwidth_frac);
Matrix rbf_gram(const Matrix& x, double sigma);

/// Centered kernel alignment of RBF Gram matrices over a minibatch.
double cka_rbf_similarity(const Matrix& m, const Matrix& s, double bandwidth_frac = kDefaultBandwidthFrac);
/// 1 - CKA with the gradient with respect to `m`, including the path through
/// the median-distance bandwidth.
GradResult cka_loss(const Matrix& m, const Matrix& s, double bandwidth_frac = kDefaultBandwidthFrac);

/// KL(softmax(teacher) || softmax(student)) along channels, averaged over
/// rows and locations.
GradResult kl_divergence(const FeatureBatch& student_logits, const FeatureBatch& teacher_logits);

enum class FeatureLoss { norm_l2, cosine, attention_transfer, cka_rbf, cka_linear };
enum class PredictionLoss { none, kl, match_task_loss };
std::string to_string(FeatureLoss f);
std::string to_string(PredictionLoss p);
FeatureLoss parse_feature_loss(const std::string& s);
PredictionLoss parse_prediction_loss(const std::string& s);

/// Dispatches on `kind`; cka_linear raises NotImplementedError.
GradResult feature_loss(FeatureLoss kind, const FeatureBatch& m, const FeatureBatch& s,
                        double bandwidth_frac = kDefaultBandwidthFrac);

/// Prediction distillation for one task. Cross-entropy tasks use KL with the
/// teacher as the reference distribution; with match_task_loss regression
/// tasks reuse their own loss (l1, cosine) against the teacher output.
GradResult prediction_distill_loss(const TaskSpec& task, PredictionLoss kind, const FeatureBatch& student,
                                   const FeatureBatch& teacher);

// --- weights and schedules -------------------------------------------------------

struct AnnealSchedule {
  double initial = 0.0;  // lambda_0
  long iterations = 1;   // K: iterations to reach zero
  bool active = false;
};

/// lambda_0 * max(0, 1 - iter / K); the constant lambda_0 when inactive.
double anneal_weight(const AnnealSchedule& sched, long iter);

struct TaskWeights {
  double task = 1.0;        // lambda^t
  AnnealSchedule feature;   // lambda_f^t
  AnnealSchedule prediction;  // lambda_p^t
};

struct DistillationConfig {
  std::map<std::string, TaskWeights> weights;
  FeatureLoss feature_loss = FeatureLoss::norm_l2;
  PredictionLoss prediction_loss = PredictionLoss::none;
  double bandwidth_frac = kDefaultBandwidthFrac;

  /// Default weights (1, 0, 0) for tasks without an entry.
  const TaskWeights& of(const std::string& task) const;
  double lambda_task(const std::string& task) const { return of(task).task; }
  double lambda_feature(const std::string& task, long iter) const { return anneal_weight(of(task).feature, iter); }
  double lambda_prediction(const std::string& task, long iter) const {
    return prediction_loss == PredictionLoss::none ? 0.0 : anneal_weight(of(task).prediction, iter);
  }
  bool needs_teacher(const std::string& task) const;
  /// Finite, non-negative weights; positive anneal horizons.
  void validate() const;
};

/// Dense multi-task preset: lambda^t = 1, lambda_f = 1 (seg, depth) and 2
/// (normals), no prediction distillation, normalized-L2 feature loss.
DistillationConfig dense_preset();
/// Multi-domain preset: lambda^t = 1, lambda_f = lambda_p = `weight` (the
/// anchor domain, if any, gets `anchor_weight`), CKA features + KL predictions.
DistillationConfig domain_preset(const std::vector<TaskSpec>& tasks, double weight = 1.0,
                                 const std::string& anchor = {}, double anchor_weight = 4.0);
/// Copy with every feature/prediction weight set to zero (vanilla MTL).
DistillationConfig without_distillation(DistillationConfig cfg);

}  // namespace unirep
