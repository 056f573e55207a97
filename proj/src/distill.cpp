#include "unirep/distill.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "unirep/errors.hpp"

namespace unirep {

FeatureBatch::FeatureBatch(int b, int c, int h, int w)
    : data(static_cast<std::size_t>(b) * c * h * w, 0.0), batch(b), channels(c), height(h), width(w) {}

FeatureBatch::FeatureBatch(std::vector<double> values, int b, int c, int h, int w)
    : data(std::move(values)), batch(b), channels(c), height(h), width(w) {
  if (data.size() != static_cast<std::size_t>(b) * c * h * w) throw ShapeError("feature batch size mismatch");
}

FeatureBatch FeatureBatch::from_tensor(const Tensor& t) {
  std::vector<double> v = to_double(t);
  if (t.rank() == 2) return FeatureBatch(std::move(v), t.dim(0), t.dim(1));
  if (t.rank() == 4) return FeatureBatch(std::move(v), t.dim(0), t.dim(1), t.dim(2), t.dim(3));
  throw ShapeError("features must be rank 2 or 4, got " + shape_str(t.shape()));
}

Tensor FeatureBatch::to_tensor(const Shape& shape) const { return from_double(shape, data); }

namespace {

void require_same(const FeatureBatch& m, const FeatureBatch& s, const char* what) {
  if (!m.same_shape(s)) throw ShapeError(std::string(what) + ": student and teacher shapes differ");
  if (m.batch < 1) throw ShapeError(std::string(what) + ": empty batch");
}

struct Norm {
  double norm;   // unclamped
  double scale;  // max(norm, eps)
  bool clamped() const { return norm < kNormEps; }
};

Norm norm_at(const FeatureBatch& f, int n, std::size_t p) {
  double ss = 0.0;
  for (int c = 0; c < f.channels; ++c) ss += f.at(n, c, p) * f.at(n, c, p);
  const double nr = std::sqrt(ss);
  return {nr, std::max(nr, kNormEps)};
}

/// Gradient of ||x/|x| - t||^2 with respect to x, with |x| floored at eps
/// (x/eps is linear below the floor).
void unit_distance_grad(const double* x, const double* t_hat, int c, const Norm& nx, double scale_out, double* out,
                        std::size_t stride) {
  if (nx.clamped()) {
    for (int k = 0; k < c; ++k) out[k * stride] += scale_out * 2.0 * (x[k * stride] / nx.scale - t_hat[k]) / nx.scale;
    return;
  }
  double dot = 0.0;
  for (int k = 0; k < c; ++k) dot += x[k * stride] / nx.scale * t_hat[k];
  for (int k = 0; k < c; ++k) {
    const double xh = x[k * stride] / nx.scale;
    out[k * stride] += scale_out * 2.0 / nx.scale * (xh * dot - t_hat[k]);
  }
}

}  // namespace

GradResult norm_l2_feature_loss(const FeatureBatch& m, const FeatureBatch& s) {
  require_same(m, s, "norm_l2 feature loss");
  GradResult r{0.0, std::vector<double>(m.data.size(), 0.0)};
  const std::size_t plane = m.plane();
  std::vector<double> s_hat(static_cast<std::size_t>(m.channels));
  const double inv_b = 1.0 / m.batch;
  for (int n = 0; n < m.batch; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const Norm nm = norm_at(m, n, p), ns = norm_at(s, n, p);
      for (int c = 0; c < m.channels; ++c) {
        s_hat[static_cast<std::size_t>(c)] = s.at(n, c, p) / ns.scale;
        const double d = m.at(n, c, p) / nm.scale - s_hat[static_cast<std::size_t>(c)];
        r.value += d * d * inv_b;
      }
      const std::size_t base = static_cast<std::size_t>(n) * m.row_size() + p;
      unit_distance_grad(m.data.data() + base, s_hat.data(), m.channels, nm, inv_b, r.grad.data() + base, plane);
    }
  }
  return r;
}

GradResult cosine_feature_loss(const FeatureBatch& m, const FeatureBatch& s) {
  require_same(m, s, "cosine feature loss");
  GradResult r{0.0, std::vector<double>(m.data.size(), 0.0)};
  const std::size_t plane = m.plane();
  const double inv = 1.0 / (static_cast<double>(m.batch) * plane);
  for (int n = 0; n < m.batch; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      const Norm nm = norm_at(m, n, p), ns = norm_at(s, n, p);
      double cos = 0.0;
      for (int c = 0; c < m.channels; ++c) cos += (m.at(n, c, p) / nm.scale) * (s.at(n, c, p) / ns.scale);
      r.value += (1.0 - cos) * inv;
      for (int c = 0; c < m.channels; ++c) {
        const double sh = s.at(n, c, p) / ns.scale;
        const double g = nm.clamped() ? sh / nm.scale : (sh - m.at(n, c, p) / nm.scale * cos) / nm.scale;
        r.grad[(static_cast<std::size_t>(n) * m.channels + c) * plane + p] = -g * inv;
      }
    }
  }
  return r;
}

GradResult attention_transfer_loss(const FeatureBatch& m, const FeatureBatch& s) {
  require_same(m, s, "attention transfer loss");
  GradResult r{0.0, std::vector<double>(m.data.size(), 0.0)};
  const std::size_t plane = m.plane();
  const double inv_b = 1.0 / m.batch;
  const double inv_c = 1.0 / m.channels;
  std::vector<double> am(plane), as(plane), ga(plane);
  for (int n = 0; n < m.batch; ++n) {
    std::fill(am.begin(), am.end(), 0.0);
    std::fill(as.begin(), as.end(), 0.0);
    for (int c = 0; c < m.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        am[p] += m.at(n, c, p) * inv_c;
        as[p] += s.at(n, c, p) * inv_c;
      }
    }
    double sm = 0.0, st = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      sm += am[p] * am[p];
      st += as[p] * as[p];
    }
    const Norm nm{std::sqrt(sm), std::max(std::sqrt(sm), kNormEps)};
    const double ns = std::max(std::sqrt(st), kNormEps);
    for (std::size_t p = 0; p < plane; ++p) {
      as[p] /= ns;
      const double d = am[p] / nm.scale - as[p];
      r.value += d * d * inv_b;
    }
    std::fill(ga.begin(), ga.end(), 0.0);
    unit_distance_grad(am.data(), as.data(), static_cast<int>(plane), nm, inv_b, ga.data(), 1);
    for (int c = 0; c < m.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) r.grad[(static_cast<std::size_t>(n) * m.channels + c) * plane + p] = ga[p] * inv_c;
    }
  }
  return r;
}

// --- CKA -------------------------------------------------------------------------

Matrix::Matrix(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != static_cast<std::size_t>(r) * c) throw ShapeError("matrix size mismatch");
}

Matrix Matrix::from_features(const FeatureBatch& f) {
  return Matrix(f.batch, static_cast<int>(f.row_size()), f.data);
}

namespace {

Matrix pairwise_distances(const Matrix& x) {
  Matrix d(x.rows, x.rows);
  for (int i = 0; i < x.rows; ++i) {
    for (int j = i + 1; j < x.rows; ++j) {
      double ss = 0.0;
      for (int k = 0; k < x.cols; ++k) {
        const double diff = x(i, k) - x(j, k);
        ss += diff * diff;
      }
      d(i, j) = d(j, i) = std::sqrt(ss);
    }
  }
  return d;
}

/// Pair(s) realizing the median of the strict upper triangle: one pair for an
/// odd count, the two middle pairs (averaged) for an even count.
struct MedianPairs {
  double value = 0.0;
  std::vector<std::pair<int, int>> pairs;
};

MedianPairs median_distance(const Matrix& d) {
  std::vector<std::tuple<double, int, int>> all;
  for (int i = 0; i < d.rows; ++i)
    for (int j = i + 1; j < d.rows; ++j) all.emplace_back(d(i, j), i, j);
  std::sort(all.begin(), all.end());
  MedianPairs m;
  const std::size_t n = all.size();
  if (n % 2 == 1) {
    const auto& [v, i, j] = all[n / 2];
    m.value = v;
    m.pairs = {{i, j}};
  } else {
    const auto& [v1, i1, j1] = all[n / 2 - 1];
    const auto& [v2, i2, j2] = all[n / 2];
    m.value = 0.5 * (v1 + v2);
    m.pairs = {{i1, j1}, {i2, j2}};
  }
  return m;
}

struct Kernel {
  Matrix dist, gram, centered;
  MedianPairs median;
  double sigma = 1.0;
  bool sigma_from_median = false;
};

Kernel rbf_kernel(const Matrix& x, double frac) {
  Kernel k;
  k.dist = pairwise_distances(x);
  k.median = median_distance(k.dist);
  if (k.median.value > 0.0) {
    k.sigma = frac * k.median.value;
    k.sigma_from_median = true;
  }
  const int b = x.rows;
  k.gram = Matrix(b, b);
  const double inv = 1.0 / (2.0 * k.sigma * k.sigma);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) k.gram(i, j) = std::exp(-k.dist(i, j) * k.dist(i, j) * inv);
  // H K H: subtract row and column means, add back the grand mean.
  std::vector<double> row(static_cast<std::size_t>(b), 0.0);
  double all = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) row[static_cast<std::size_t>(i)] += k.gram(i, j);
    all += row[static_cast<std::size_t>(i)];
    row[static_cast<std::size_t>(i)] /= b;
  }
  all /= static_cast<double>(b) * b;
  k.centered = Matrix(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      k.centered(i, j) = k.gram(i, j) - row[static_cast<std::size_t>(i)] - row[static_cast<std::size_t>(j)] + all;
  return k;
}

double frobenius(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

void check_cka_inputs(const Matrix& m, const Matrix& s, double frac) {
  if (m.rows < 3) throw ConfigError("CKA needs a batch of at least 3 rows, got " + std::to_string(m.rows));
  if (m.rows != s.rows) throw ShapeError("CKA inputs have different row counts");
  if (!(frac > 0.0) || !std::isfinite(frac)) throw ConfigError("CKA bandwidth_frac must be positive");
}

}  // namespace

double rbf_bandwidth(const Matrix& x, double bandwidth_frac) {
  const MedianPairs m = median_distance(pairwise_distances(x));
  return m.value > 0.0 ? bandwidth_frac * m.value : 1.0;
}

Matrix rbf_gram(const Matrix& x, double sigma) {
  const Matrix d = pairwise_distances(x);
  Matrix g(x.rows, x.rows);
  for (std::size_t i = 0; i < d.data.size(); ++i) g.data[i] = std::exp(-d.data[i] * d.data[i] / (2.0 * sigma * sigma));
  return g;
}

double cka_rbf_similarity(const Matrix& m, const Matrix& s, double bandwidth_frac) {
  check_cka_inputs(m, s, bandwidth_frac);
  const Kernel p = rbf_kernel(m, bandwidth_frac), t = rbf_kernel(s, bandwidth_frac);
  const double a = frobenius(p.centered, t.centered);
  const double den = std::max(std::sqrt(frobenius(p.centered, p.centered) * frobenius(t.centered, t.centered)),
                              kCkaDenominatorFloor);
  return a / den;
}

GradResult cka_loss(const Matrix& m, const Matrix& s, double bandwidth_frac) {
  check_cka_inputs(m, s, bandwidth_frac);
  const Kernel p = rbf_kernel(m, bandwidth_frac), t = rbf_kernel(s, bandwidth_frac);
  const double a = frobenius(p.centered, t.centered);
  const double b = frobenius(p.centered, p.centered);
  const double c = frobenius(t.centered, t.centered);
  const double root = std::sqrt(b * c);
  const bool clamped = root < kCkaDenominatorFloor;
  const double den = clamped ? kCkaDenominatorFloor : root;

  GradResult r{1.0 - a / den, std::vector<double>(m.data.size(), 0.0)};
  const int n = m.rows, dim = m.cols;
  // dCKA/dP; centering is absorbed since <HPH, X> = <P, HXH> for centered X.
  Matrix g(n, n);
  for (std::size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = t.centered.data[i] / den - (clamped ? 0.0 : a / (b * den) * p.centered.data[i]);

  const double sigma2 = p.sigma * p.sigma;
  double d_sigma = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const double gp = g(i, j) * p.gram(i, j);
      const double coef = -2.0 * gp / sigma2;
      for (int k = 0; k < dim; ++k) r.grad[static_cast<std::size_t>(i) * dim + k] += coef * (m(i, k) - m(j, k));
      d_sigma += gp * p.dist(i, j) * p.dist(i, j) / (sigma2 * p.sigma);
    }
  }
  if (p.sigma_from_median) {
    const double per_pair = d_sigma * bandwidth_frac / static_cast<double>(p.median.pairs.size());
    for (const auto& [i, j] : p.median.pairs) {
      const double dij = p.dist(i, j);
      for (int k = 0; k < dim; ++k) {
        const double u = (m(i, k) - m(j, k)) / dij * per_pair;
        r.grad[static_cast<std::size_t>(i) * dim + k] += u;
        r.grad[static_cast<std::size_t>(j) * dim + k] -= u;
      }
    }
  }
  for (double& v : r.grad) v = -v;
  return r;
}

// --- prediction losses -------------------------------------------------------------

namespace {

void log_softmax_at(const FeatureBatch& x, int n, std::size_t p, std::vector<double>& out) {
  double mx = -1e300;
  for (int c = 0; c < x.channels; ++c) mx = std::max(mx, x.at(n, c, p));
  double z = 0.0;
  for (int c = 0; c < x.channels; ++c) z += std::exp(x.at(n, c, p) - mx);
  const double lz = std::log(z) + mx;
  for (int c = 0; c < x.channels; ++c) out[static_cast<std::size_t>(c)] = x.at(n, c, p) - lz;
}

/// Soft-target loss with the teacher distribution as reference. With
/// `subtract_entropy` the value is the KL divergence, otherwise the
/// cross-entropy; the gradient is the same.
GradResult soft_target_loss(const FeatureBatch& student, const FeatureBatch& teacher, bool subtract_entropy) {
  require_same(student, teacher, "prediction distillation");
  GradResult r{0.0, std::vector<double>(student.data.size(), 0.0)};
  const std::size_t plane = student.plane();
  const double inv = 1.0 / (static_cast<double>(student.batch) * plane);
  const auto nc = static_cast<std::size_t>(student.channels);
  std::vector<double> ls(nc), lt(nc);
  for (int n = 0; n < student.batch; ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      log_softmax_at(student, n, p, ls);
      log_softmax_at(teacher, n, p, lt);
      for (std::size_t c = 0; c < nc; ++c) {
        const double pt = std::exp(lt[c]);
        r.value += pt * ((subtract_entropy ? lt[c] : 0.0) - ls[c]) * inv;
        r.grad[(static_cast<std::size_t>(n) * nc + c) * plane + p] = (std::exp(ls[c]) - pt) * inv;
      }
    }
  }
  return r;
}

GradResult l1_distance(const FeatureBatch& student, const FeatureBatch& teacher) {
  require_same(student, teacher, "prediction distillation");
  GradResult r{0.0, std::vector<double>(student.data.size(), 0.0)};
  const double inv = 1.0 / static_cast<double>(student.data.size());
  for (std::size_t i = 0; i < student.data.size(); ++i) {
    const double d = student.data[i] - teacher.data[i];
    r.value += std::abs(d) * inv;
    r.grad[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv;
  }
  return r;
}

}  // namespace

GradResult kl_divergence(const FeatureBatch& student_logits, const FeatureBatch& teacher_logits) {
  return soft_target_loss(student_logits, teacher_logits, true);
}

GradResult prediction_distill_loss(const TaskSpec& task, PredictionLoss kind, const FeatureBatch& student,
                                   const FeatureBatch& teacher) {
  if (kind == PredictionLoss::none) throw ConfigError("prediction distillation called with loss 'none'");
  if (student.channels != task.out_channels) {
    throw ShapeError("task '" + task.id + "': prediction has " + std::to_string(student.channels) + " channels");
  }
  switch (task.loss) {
    case TaskLoss::cross_entropy: return soft_target_loss(student, teacher, kind == PredictionLoss::kl);
    case TaskLoss::l1: return l1_distance(student, teacher);
    case TaskLoss::cosine_normals: return cosine_feature_loss(student, teacher);
  }
  throw ConfigError("unhandled task loss");
}

// --- enums -------------------------------------------------------------------------

std::string to_string(FeatureLoss f) {
  switch (f) {
    case FeatureLoss::norm_l2: return "norm_l2";
    case FeatureLoss::cosine: return "cosine";
    case FeatureLoss::attention_transfer: return "attention_transfer";
    case FeatureLoss::cka_rbf: return "cka_rbf";
    case FeatureLoss::cka_linear: return "cka_linear";
  }
  return "?";
}

std::string to_string(PredictionLoss p) {
  switch (p) {
    case PredictionLoss::none: return "none";
    case PredictionLoss::kl: return "kl";
    case PredictionLoss::match_task_loss: return "match_task_loss";
  }
  return "?";
}

FeatureLoss parse_feature_loss(const std::string& s) {
  for (auto f : {FeatureLoss::norm_l2, FeatureLoss::cosine, FeatureLoss::attention_transfer, FeatureLoss::cka_rbf,
                 FeatureLoss::cka_linear})
    if (to_string(f) == s) return f;
  if (s == "at") return FeatureLoss::attention_transfer;
  throw ConfigError("unknown feature loss '" + s + "'");
}

PredictionLoss parse_prediction_loss(const std::string& s) {
  for (auto p : {PredictionLoss::none, PredictionLoss::kl, PredictionLoss::match_task_loss})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown prediction loss '" + s + "'");
}

GradResult feature_loss(FeatureLoss kind, const FeatureBatch& m, const FeatureBatch& s, double bandwidth_frac) {
  switch (kind) {
    case FeatureLoss::norm_l2: return norm_l2_feature_loss(m, s);
    case FeatureLoss::cosine: return cosine_feature_loss(m, s);
    case FeatureLoss::attention_transfer: return attention_transfer_loss(m, s);
    case FeatureLoss::cka_rbf:
      require_same(m, s, "cka feature loss");
      return cka_loss(Matrix::from_features(m), Matrix::from_features(s), bandwidth_frac);
    case FeatureLoss::cka_linear: throw NotImplementedError("feature loss 'cka_linear' is not implemented");
  }
  throw ConfigError("unhandled feature loss");
}

// --- weights -----------------------------------------------------------------------

double anneal_weight(const AnnealSchedule& sched, long iter) {
  if (iter < 0) throw ConfigError("anneal iteration must be non-negative");
  if (!sched.active) return sched.initial;
  if (sched.iterations <= 0) throw ConfigError("anneal horizon K must be positive");
  const double frac = static_cast<double>(iter) / static_cast<double>(sched.iterations);
  return sched.initial * std::max(0.0, 1.0 - frac);
}

const TaskWeights& DistillationConfig::of(const std::string& task) const {
  static const TaskWeights kDefault{};
  const auto it = weights.find(task);
  return it == weights.end() ? kDefault : it->second;
}

bool DistillationConfig::needs_teacher(const std::string& task) const {
  const TaskWeights& w = of(task);
  return w.feature.initial > 0.0 || (prediction_loss != PredictionLoss::none && w.prediction.initial > 0.0);
}

void DistillationConfig::validate() const {
  auto check = [](const std::string& where, double v) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError(where + " must be finite and non-negative");
  };
  auto check_sched = [&](const std::string& where, const AnnealSchedule& s) {
    check(where, s.initial);
    if (s.active && s.iterations <= 0) throw ConfigError(where + ": anneal horizon K must be positive");
  };
  for (const auto& [task, w] : weights) {
    check("lambda_task[" + task + "]", w.task);
    check_sched("lambda_feature[" + task + "]", w.feature);
    check_sched("lambda_prediction[" + task + "]", w.prediction);
  }
  if (!(bandwidth_frac > 0.0) || !std::isfinite(bandwidth_frac)) throw ConfigError("bandwidth_frac must be positive");
}

DistillationConfig dense_preset() {
  DistillationConfig cfg;
  cfg.feature_loss = FeatureLoss::norm_l2;
  cfg.prediction_loss = PredictionLoss::none;
  cfg.weights["seg"] = TaskWeights{1.0, {1.0, 1, false}, {0.0, 1, false}};
  cfg.weights["depth"] = TaskWeights{1.0, {1.0, 1, false}, {0.0, 1, false}};
  cfg.weights["normals"] = TaskWeights{1.0, {2.0, 1, false}, {0.0, 1, false}};
  return cfg;
}

DistillationConfig domain_preset(const std::vector<TaskSpec>& tasks, double weight, const std::string& anchor,
                                 double anchor_weight) {
  DistillationConfig cfg;
  cfg.feature_loss = FeatureLoss::cka_rbf;
  cfg.prediction_loss = PredictionLoss::kl;
  for (const auto& t : tasks) {
    const double w = t.id == anchor ? anchor_weight : weight;
    cfg.weights[t.id] = TaskWeights{1.0, {w, 1, false}, {w, 1, false}};
  }
  return cfg;
}

DistillationConfig without_distillation(DistillationConfig cfg) {
  for (auto& [task, w] : cfg.weights) {
    w.feature.initial = 0.0;
    w.prediction.initial = 0.0;
  }
  cfg.prediction_loss = PredictionLoss::none;
  return cfg;
}

}  // namespace unirep
