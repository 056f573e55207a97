#include "unirep/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unirep/errors.hpp"

namespace unirep {

Episode sample_episode(const DatasetSuite& suite, int domain, const EpisodeOptions& opts, Rng& rng) {
  if (domain < 0 || domain >= static_cast<int>(suite.domains.size())) {
    throw SamplingError("domain " + std::to_string(domain) + " does not exist");
  }
  int ways = opts.ways;
  if (opts.varying_ways) {
    if (opts.min_ways < 1 || opts.max_ways < opts.min_ways) throw ConfigError("invalid varying ways range");
    ways = rng.range(opts.min_ways, opts.max_ways);
  }
  if (ways < 1 || opts.shots < 1 || opts.query_per_class < 1) {
    throw ConfigError("ways, shots and query_per_class must be positive");
  }

  std::map<int, std::vector<int>> by_class;
  const auto& samples = suite.split(opts.split);
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].domain == domain) by_class[samples[i].class_label].push_back(static_cast<int>(i));
  const int need = opts.shots + opts.query_per_class;
  std::vector<int> eligible;
  for (const auto& [c, rows] : by_class)
    if (static_cast<int>(rows.size()) >= need) eligible.push_back(c);
  if (static_cast<int>(eligible.size()) < ways) {
    throw SamplingError("domain " + std::to_string(domain) + " has " + std::to_string(eligible.size()) +
                        " classes with >= " + std::to_string(need) + " examples in split '" + to_string(opts.split) +
                        "', episode needs " + std::to_string(ways) + " (short by " +
                        std::to_string(ways - static_cast<int>(eligible.size())) + ")");
  }

  Episode ep;
  ep.domain = domain;
  ep.ways = ways;
  ep.shots = opts.shots;
  rng.shuffle(eligible);
  ep.classes.assign(eligible.begin(), eligible.begin() + ways);
  for (int k = 0; k < ways; ++k) {
    std::vector<int> rows = by_class[ep.classes[static_cast<std::size_t>(k)]];
    rng.shuffle(rows);
    for (int i = 0; i < opts.shots; ++i) {
      ep.support.push_back(rows[static_cast<std::size_t>(i)]);
      ep.support_labels.push_back(k);
    }
    for (int i = 0; i < opts.query_per_class; ++i) {
      ep.query.push_back(rows[static_cast<std::size_t>(opts.shots + i)]);
      ep.query_labels.push_back(k);
    }
  }
  return ep;
}

namespace {

int class_count(const std::vector<int>& labels) {
  if (labels.empty()) throw SamplingError("empty support set");
  const int mx = *std::max_element(labels.begin(), labels.end());
  if (*std::min_element(labels.begin(), labels.end()) < 0) throw ConfigError("support labels must be >= 0");
  std::vector<int> seen(static_cast<std::size_t>(mx + 1), 0);
  for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
  for (int c = 0; c <= mx; ++c)
    if (!seen[static_cast<std::size_t>(c)]) throw SamplingError("class " + std::to_string(c) + " has no support example");
  return mx + 1;
}

double row_norm(const Matrix& x, int i) {
  double s = 0.0;
  for (int k = 0; k < x.cols; ++k) s += x(i, k) * x(i, k);
  return std::sqrt(s);
}

Matrix class_means(const Matrix& x, const std::vector<int>& labels, int classes, std::vector<int>& counts) {
  Matrix c(classes, x.cols);
  counts.assign(static_cast<std::size_t>(classes), 0);
  for (int i = 0; i < x.rows; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    ++counts[static_cast<std::size_t>(l)];
    for (int k = 0; k < x.cols; ++k) c(l, k) += x(i, k);
  }
  for (int l = 0; l < classes; ++l)
    for (int k = 0; k < x.cols; ++k) c(l, k) /= counts[static_cast<std::size_t>(l)];
  return c;
}

/// Loss and gradient with respect to the (already mapped) support rows.
GradResult support_loss_z(const Matrix& z, const std::vector<int>& labels, double tau) {
  if (static_cast<std::size_t>(z.rows) != labels.size()) throw ShapeError("support labels do not match features");
  const int classes = class_count(labels);
  std::vector<int> counts;
  const Matrix cent = class_means(z, labels, classes, counts);
  const int n = z.rows, d = z.cols;
  std::vector<double> zn(static_cast<std::size_t>(n)), cn(static_cast<std::size_t>(classes));
  for (int i = 0; i < n; ++i) zn[static_cast<std::size_t>(i)] = std::max(row_norm(z, i), kNormEps);
  for (int k = 0; k < classes; ++k) cn[static_cast<std::size_t>(k)] = std::max(row_norm(cent, k), kNormEps);

  GradResult r{0.0, std::vector<double>(z.data.size(), 0.0)};
  Matrix dcent(classes, d);
  std::vector<double> cos(static_cast<std::size_t>(classes)), prob(static_cast<std::size_t>(classes));
  for (int i = 0; i < n; ++i) {
    const double nz = zn[static_cast<std::size_t>(i)];
    double mx = -1e300;
    for (int k = 0; k < classes; ++k) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += z(i, j) * cent(k, j);
      cos[static_cast<std::size_t>(k)] = dot / (nz * cn[static_cast<std::size_t>(k)]);
      mx = std::max(mx, tau * (cos[static_cast<std::size_t>(k)] - 1.0));
    }
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += (prob[static_cast<std::size_t>(k)] = std::exp(tau * (cos[static_cast<std::size_t>(k)] - 1.0) - mx));
    const int y = labels[static_cast<std::size_t>(i)];
    r.value += -(tau * (cos[static_cast<std::size_t>(y)] - 1.0) - mx - std::log(sum)) / n;
    for (int k = 0; k < classes; ++k) {
      const double g = tau * (prob[static_cast<std::size_t>(k)] / sum - (k == y ? 1.0 : 0.0)) / n;
      const double ck = cos[static_cast<std::size_t>(k)], nc = cn[static_cast<std::size_t>(k)];
      for (int j = 0; j < d; ++j) {
        const double zh = z(i, j) / nz, chh = cent(k, j) / nc;
        r.grad[static_cast<std::size_t>(i) * d + j] += g * (chh - zh * ck) / nz;
        dcent(k, j) += g * (zh - chh * ck) / nc;
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) r.grad[static_cast<std::size_t>(i) * d + j] += dcent(l, j) / counts[static_cast<std::size_t>(l)];
  }
  return r;
}

}  // namespace

Matrix identity_matrix(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix apply_map(const Matrix& x, const Matrix& map) {
  if (map.rows != map.cols || map.cols != x.cols) throw ShapeError("map must be C x C for C-dimensional features");
  Matrix z(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < map.rows; ++k) {
      double s = 0.0;
      for (int j = 0; j < x.cols; ++j) s += map(k, j) * x(i, j);
      z(i, k) = s;
    }
  return z;
}

Matrix ncc_predict(const Matrix& support, const std::vector<int>& support_labels, const Matrix& query,
                   double temperature) {
  if (static_cast<std::size_t>(support.rows) != support_labels.size()) throw ShapeError("support labels do not match");
  if (support.cols != query.cols) throw ShapeError("support and query dimensions differ");
  const int classes = class_count(support_labels);
  std::vector<int> counts;
  const Matrix cent = class_means(support, support_labels, classes, counts);
  Matrix probs(query.rows, classes);
  for (int q = 0; q < query.rows; ++q) {
    const double nq = row_norm(query, q);
    if (nq == 0.0) throw NumericalError("ncc_predict: zero query vector", "ncc/query");
    double mx = -1e300;
    for (int k = 0; k < classes; ++k) {
      double dot = 0.0;
      for (int j = 0; j < query.cols; ++j) dot += query(q, j) * cent(k, j);
      const double cos = dot / (nq * std::max(row_norm(cent, k), kNormEps));
      probs(q, k) = temperature * (cos - 1.0);
      mx = std::max(mx, probs(q, k));
    }
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += (probs(q, k) = std::exp(probs(q, k) - mx));
    for (int k = 0; k < classes; ++k) probs(q, k) /= sum;
  }
  return probs;
}

GradResult ncc_support_loss_features(const Matrix& support, const std::vector<int>& labels, double temperature) {
  return support_loss_z(support, labels, temperature);
}

GradResult ncc_support_loss(const Matrix& support, const std::vector<int>& labels, const Matrix& map,
                            double temperature) {
  const Matrix z = apply_map(support, map);
  const GradResult gz = support_loss_z(z, labels, temperature);
  GradResult r{gz.value, std::vector<double>(map.data.size(), 0.0)};
  const int d = support.cols;
  for (int i = 0; i < support.rows; ++i)
    for (int k = 0; k < d; ++k) {
      const double g = gz.grad[static_cast<std::size_t>(i) * d + k];
      for (int j = 0; j < d; ++j) r.grad[static_cast<std::size_t>(k) * d + j] += g * support(i, j);
    }
  return r;
}

std::string to_string(MapOptimizer m) {
  switch (m) {
    case MapOptimizer::adadelta: return "adadelta";
    case MapOptimizer::adam: return "adam";
    case MapOptimizer::sgd: return "sgd";
  }
  return "?";
}

MapOptimizer parse_map_optimizer(const std::string& s) {
  for (auto m : {MapOptimizer::adadelta, MapOptimizer::adam, MapOptimizer::sgd})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown map optimizer '" + s + "'");
}

FewShotAdapter adapt_linear_map(const Matrix& support, const std::vector<int>& labels, const AdaptOptions& opts) {
  if (opts.steps < 0) throw ConfigError("adaptation steps must be >= 0");
  FewShotAdapter out{identity_matrix(support.cols), {}};
  const std::size_t n = out.map.data.size();
  std::vector<double> s1(n, 0.0), s2(n, 0.0);
  auto fail = [&]() {
    std::ostringstream os;
    os << "meta-test adaptation diverged; loss trace:";
    for (double v : out.loss_trace) os << ' ' << v;
    throw NumericalError(os.str(), "fewshot/support");
  };
  for (int step = 0; step <= opts.steps; ++step) {
    const GradResult g = ncc_support_loss(support, labels, out.map, opts.temperature);
    out.loss_trace.push_back(g.value);
    if (!std::isfinite(g.value)) fail();
    if (step == opts.steps) break;
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.grad[i];
      double delta = 0.0;
      switch (opts.optimizer) {
        case MapOptimizer::adadelta: {
          constexpr double rho = 0.9, eps = 1e-6;
          s1[i] = rho * s1[i] + (1 - rho) * gi * gi;
          const double upd = std::sqrt(s2[i] + eps) / std::sqrt(s1[i] + eps) * gi;
          s2[i] = rho * s2[i] + (1 - rho) * upd * upd;
          delta = opts.lr * upd;
          break;
        }
        case MapOptimizer::adam: {
          constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
          s1[i] = b1 * s1[i] + (1 - b1) * gi;
          s2[i] = b2 * s2[i] + (1 - b2) * gi * gi;
          const double m = s1[i] / (1 - std::pow(b1, step + 1)), v = s2[i] / (1 - std::pow(b2, step + 1));
          delta = opts.lr * m / (std::sqrt(v) + eps);
          break;
        }
        case MapOptimizer::sgd: delta = opts.lr * gi; break;
      }
      out.map.data[i] -= delta;
    }
  }
  return out;
}

std::map<int, double> recall_at_k(const Matrix& features, const std::vector<int>& labels, const std::vector<int>& ks) {
  if (ks.empty()) throw ConfigError("recall_at_k: no k values");
  if (static_cast<std::size_t>(features.rows) != labels.size()) throw ShapeError("recall_at_k: label count mismatch");
  const int kmax = *std::max_element(ks.begin(), ks.end());
  if (*std::min_element(ks.begin(), ks.end()) < 1) throw ConfigError("recall_at_k: k must be >= 1");
  const int b = features.rows;
  if (b < kmax + 1) throw ConfigError("recall_at_k: need at least max(k)+1 items");
  std::vector<double> norms(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) norms[static_cast<std::size_t>(i)] = std::max(row_norm(features, i), kNormEps);

  // first_hit[i]: rank (1-based) of the first same-label neighbour, or 0.
  std::vector<int> first_hit(static_cast<std::size_t>(b), 0);
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < b; ++i) {
    order.clear();
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      double dot = 0.0;
      for (int k = 0; k < features.cols; ++k) dot += features(i, k) * features(j, k);
      order.emplace_back(dot / (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)]), j);
    }
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& c) { return a.first > c.first; });
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (labels[static_cast<std::size_t>(order[r].second)] == labels[static_cast<std::size_t>(i)]) {
        first_hit[static_cast<std::size_t>(i)] = static_cast<int>(r) + 1;
        break;
      }
    }
  }
  std::map<int, double> out;
  for (int k : ks) {
    int hits = 0;
    for (int h : first_hit) hits += h > 0 && h <= k;
    out[k] = static_cast<double>(hits) / b;
  }
  return out;
}

std::pair<double, double> mean_ci95(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(xs.size()))};
}

EpisodeEvaluation evaluate_episodes(const DatasetSuite& suite, int domain, const Matrix& features,
                                    const FewShotOptions& opts) {
  if (features.rows != static_cast<int>(suite.split(opts.episode.split).size())) {
    throw ShapeError("few-shot features must have one row per sample of the episode split");
  }
  EpisodeEvaluation ev;
  ev.domain = domain;
  const DomainInfo& info = suite.domains.at(static_cast<std::size_t>(domain));
  ev.name = info.withheld ? "unseen:" + info.style : info.task_id;
  ev.seen = !info.withheld;
  auto rows_of = [&](const std::vector<int>& idx) {
    Matrix m(static_cast<int>(idx.size()), features.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(features.data.begin() + static_cast<std::ptrdiff_t>(idx[i]) * features.cols, features.cols,
                  m.data.begin() + static_cast<std::ptrdiff_t>(i) * features.cols);
    return m;
  };
  for (int e = 0; e < opts.episodes; ++e) {
    Rng rng(derive_seed(opts.seed, "fewshot/episode/" + std::to_string(domain), static_cast<std::uint64_t>(e)));
    const Episode ep = sample_episode(suite, domain, opts.episode, rng);
    Matrix s = rows_of(ep.support), q = rows_of(ep.query);
    if (opts.adapt) {
      const FewShotAdapter a = adapt_linear_map(s, ep.support_labels, opts.adapt_options);
      s = apply_map(s, a.map);
      q = apply_map(q, a.map);
    }
    const Matrix p = ncc_predict(s, ep.support_labels, q, opts.adapt_options.temperature);
    int correct = 0;
    for (int i = 0; i < p.rows; ++i) {
      int best = 0;
      for (int k = 1; k < p.cols; ++k)
        if (p(i, k) > p(i, best)) best = k;
      correct += best == ep.query_labels[static_cast<std::size_t>(i)];
    }
    ev.accuracies.push_back(static_cast<double>(correct) / p.rows);
  }
  std::tie(ev.mean, ev.ci95) = mean_ci95(ev.accuracies);
  return ev;
}

}  // namespace unirep
