#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Written as plain loops, without reusing library internals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const Vec& a, const Vec& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double den = std::sqrt(std::max(na, nb));
  return den == 0 ? 0.0 : std::sqrt(d) / den;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), m = b[0].size(), k = b.size();
  Mat c(n, Vec(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t l = 0; l < k; ++l) c[i][j] += a[i][l] * b[l][j];
  return c;
}

inline double trace(const Mat& a) {
  double t = 0;
  for (std::size_t i = 0; i < a.size(); ++i) t += a[i][i];
  return t;
}

/// RBF Gram matrix with sigma = frac * median of the B(B-1)/2 pairwise
/// distances (mean of the two middle values for an even count; 1 when 0).
inline Mat rbf_gram(const Mat& x, double frac) {
  const std::size_t b = x.size();
  Mat d(b, Vec(b, 0.0));
  std::vector<double> pairs;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < x[i].size(); ++c) s += (x[i][c] - x[j][c]) * (x[i][c] - x[j][c]);
      d[i][j] = std::sqrt(s);
      if (i < j) pairs.push_back(d[i][j]);
    }
  std::sort(pairs.begin(), pairs.end());
  const std::size_t n = pairs.size();
  const double med = n % 2 ? pairs[n / 2] : 0.5 * (pairs[n / 2 - 1] + pairs[n / 2]);
  const double sigma = med > 0 ? frac * med : 1.0;
  Mat g(b, Vec(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) g[i][j] = std::exp(-d[i][j] * d[i][j] / (2 * sigma * sigma));
  return g;
}

/// tr(PHTH) / sqrt(tr(PHPH) tr(THTH)) with explicit centering matrices.
inline double cka(const Mat& m, const Mat& s, double frac = 0.5) {
  const std::size_t b = m.size();
  Mat h(b, Vec(b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) h[i][j] = (i == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(b);
  const Mat p = rbf_gram(m, frac), t = rbf_gram(s, frac);
  const Mat ph = matmul(p, h), th = matmul(t, h);
  const double num = trace(matmul(ph, th));
  const double den = std::sqrt(trace(matmul(ph, ph)) * trace(matmul(th, th)));
  return num / std::max(den, 1e-12);
}

/// PCGrad recomputed for a given visiting order. Every projection is against
/// the unmodified gradient of the other task.
inline Mat pcgrad(const Mat& grads, const std::vector<int>& order) {
  Mat out;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Vec g = grads[i];
    for (int j : order) {
      if (static_cast<std::size_t>(j) == i) continue;
      const Vec& o = grads[static_cast<std::size_t>(j)];
      const double nn = dot(o, o);
      const double d = dot(g, o);
      if (nn > 0 && d < 0)
        for (std::size_t k = 0; k < g.size(); ++k) g[k] -= d / nn * o[k];
    }
    out.push_back(g);
  }
  return out;
}

/// Recall@k by counting, for every same-label candidate, how many others
/// outrank it (higher cosine, or equal cosine and lower index).
inline double recall_at_k(const Mat& f, const std::vector<int>& labels, int k) {
  const std::size_t b = f.size();
  std::vector<double> norm(b);
  for (std::size_t i = 0; i < b; ++i) norm[i] = std::max(std::sqrt(dot(f[i], f[i])), 1e-12);
  auto sim = [&](std::size_t i, std::size_t j) {
    double d = 0;
    for (std::size_t c = 0; c < f[i].size(); ++c) d += f[i][c] * f[j][c];
    return d / (norm[i] * norm[j]);
  };
  int hits = 0;
  for (std::size_t i = 0; i < b; ++i) {
    bool hit = false;
    for (std::size_t j = 0; j < b && !hit; ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      const double sj = sim(i, j);
      int rank = 0;
      for (std::size_t l = 0; l < b; ++l) {
        if (l == i || l == j) continue;
        const double sl = sim(i, l);
        if (sl > sj || (sl == sj && l < j)) ++rank;
      }
      hit = rank < k;
    }
    hits += hit;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

/// Signed mean relative improvement over the baseline, in percent.
inline double delta_mtl(const Vec& method, const Vec& base, const std::vector<bool>& lower_is_better) {
  double s = 0;
  for (std::size_t i = 0; i < method.size(); ++i) {
    const double sign = lower_is_better[i] ? -1.0 : 1.0;
    s += sign * (method[i] - base[i]) / base[i];
  }
  return 100.0 * s / static_cast<double>(method.size());
}

}  // namespace oracle
