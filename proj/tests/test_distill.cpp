#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "unirep/distill.hpp"
#include "unirep/errors.hpp"
#include "unirep/rng.hpp"

using namespace unirep;

namespace {

FeatureBatch random_batch(Rng& rng, int b, int c, int h, int w, double scale = 1.0) {
  FeatureBatch f(b, c, h, w);
  for (double& v : f.data) v = scale * rng.normal();
  return f;
}

Matrix random_matrix(Rng& rng, int r, int c) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.normal();
  return m;
}

oracle::Mat to_rows(const Matrix& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows), oracle::Vec(static_cast<std::size_t>(m.cols)));
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

template <class Loss>
double fd_error(const FeatureBatch& m, const FeatureBatch& s, Loss loss) {
  const GradResult r = loss(m, s);
  auto f = [&](const oracle::Vec& x) {
    FeatureBatch mm = m;
    mm.data = x;
    return loss(mm, s).value;
  };
  return oracle::relative_error(r.grad, oracle::central_difference(f, m.data));
}

}  // namespace

TEST_CASE("norm_l2 hand examples") {
  FeatureBatch m({3, 4}, 1, 2), s({1, 0}, 1, 2);
  CHECK(norm_l2_feature_loss(m, s).value == doctest::Approx(0.8).epsilon(1e-12));
  FeatureBatch s2({6, 8}, 1, 2);
  CHECK(norm_l2_feature_loss(m, s2).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("norm_l2 equals 2 - 2cos for vectors and ignores positive scales") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureBatch m = random_batch(rng, 3, 5, 2, 2), s = random_batch(rng, 3, 5, 2, 2);
    FeatureBatch ms = m, ss = s;
    for (double& v : ms.data) v *= 7.5;
    for (double& v : ss.data) v *= 0.02;
    CHECK(std::abs(norm_l2_feature_loss(m, s).value - norm_l2_feature_loss(ms, ss).value) < 1e-9);
  }
  const FeatureBatch a = random_batch(rng, 1, 6, 1, 1), b = random_batch(rng, 1, 6, 1, 1);
  const double cos = oracle::dot(a.data, b.data) / std::sqrt(oracle::dot(a.data, a.data) * oracle::dot(b.data, b.data));
  CHECK(norm_l2_feature_loss(a, b).value == doctest::Approx(2 - 2 * cos).epsilon(1e-12));
}

TEST_CASE("norm_l2 sums over locations and averages over the batch") {
  Rng rng(2);
  const FeatureBatch m = random_batch(rng, 2, 3, 2, 3), s = random_batch(rng, 2, 3, 2, 3);
  double expected = 0;
  for (int n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < m.plane(); ++p) {
      double nm = 0, ns = 0, d = 0;
      for (int c = 0; c < 3; ++c) {
        nm += m.at(n, c, p) * m.at(n, c, p);
        ns += s.at(n, c, p) * s.at(n, c, p);
      }
      for (int c = 0; c < 3; ++c) {
        const double x = m.at(n, c, p) / std::sqrt(nm) - s.at(n, c, p) / std::sqrt(ns);
        d += x * x;
      }
      expected += d / 2;
    }
  CHECK(norm_l2_feature_loss(m, s).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("zero feature vectors are guarded") {
  FeatureBatch z(1, 3), s({1, 2, 3}, 1, 3);
  const GradResult r = norm_l2_feature_loss(z, s);
  CHECK(std::isfinite(r.value));
  for (double g : r.grad) CHECK(std::isfinite(g));
}

TEST_CASE("cosine loss of orthogonal and parallel vectors") {
  FeatureBatch a({1, 0, 0}, 1, 3), b({0, 2, 0}, 1, 3), c({3, 0, 0}, 1, 3);
  CHECK(cosine_feature_loss(a, b).value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine_feature_loss(a, c).value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("attention transfer is blind to channel permutations") {
  Rng rng(3);
  FeatureBatch s = random_batch(rng, 2, 4, 3, 3);
  FeatureBatch m = s;
  // swap channels 0 and 2 at every location: channel means are unchanged
  for (int n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < s.plane(); ++p) std::swap(m.at(n, 0, p), m.at(n, 2, p));
  CHECK(attention_transfer_loss(m, s).value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(norm_l2_feature_loss(m, s).value > 1e-3);
}

TEST_CASE("gradients of feature losses match finite differences") {
  Rng rng(4);
  for (int trial = 0; trial < 8; ++trial) {
    const FeatureBatch m = random_batch(rng, 2, 3, 2, 2), s = random_batch(rng, 2, 3, 2, 2);
    CHECK(fd_error(m, s, norm_l2_feature_loss) < 1e-6);
    CHECK(fd_error(m, s, cosine_feature_loss) < 1e-6);
    CHECK(fd_error(m, s, attention_transfer_loss) < 1e-6);
    CHECK(fd_error(m, s, kl_divergence) < 1e-6);
  }
}

TEST_CASE("kl divergence is zero for equal logits and positive otherwise") {
  Rng rng(5);
  const FeatureBatch a = random_batch(rng, 4, 5, 1, 1), b = random_batch(rng, 4, 5, 1, 1);
  CHECK(kl_divergence(a, a).value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(kl_divergence(a, b).value > 0.0);
  FeatureBatch shifted = a;
  for (double& v : shifted.data) v += 3.0;
  CHECK(std::abs(kl_divergence(shifted, a).value) < 1e-12);
}

TEST_CASE("cka matches the explicit-centering oracle") {
  Rng rng(6);
  for (int b = 3; b <= 9; ++b) {
    const Matrix m = random_matrix(rng, b, 4), s = random_matrix(rng, b, 6);
    CHECK(cka_rbf_similarity(m, s) == doctest::Approx(oracle::cka(to_rows(m), to_rows(s))).epsilon(1e-10));
    CHECK(cka_rbf_similarity(m, s, 0.8) == doctest::Approx(oracle::cka(to_rows(m), to_rows(s), 0.8)).epsilon(1e-10));
  }
}

TEST_CASE("cka properties") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 4 + static_cast<int>(rng.below(12));
    const Matrix m = random_matrix(rng, b, 5), s = random_matrix(rng, b, 3);
    CHECK(cka_rbf_similarity(m, m) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(cka_rbf_similarity(m, s) - cka_rbf_similarity(s, m)) < 1e-12);
    const double v = cka_rbf_similarity(m, s);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-9);
    Matrix scaled = m;
    for (double& x : scaled.data) x *= 50.0;
    CHECK(cka_rbf_similarity(m, scaled) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("cka needs three rows and a positive bandwidth fraction") {
  Rng rng(8);
  const Matrix m = random_matrix(rng, 2, 3);
  CHECK_THROWS_AS(cka_rbf_similarity(m, m), ConfigError);
  const Matrix ok = random_matrix(rng, 4, 3);
  CHECK_THROWS_AS(cka_rbf_similarity(ok, ok, 0.0), ConfigError);
}

TEST_CASE("constant features fall back to unit bandwidth") {
  Matrix c(4, 2, std::vector<double>(8, 1.5));
  CHECK(rbf_bandwidth(c, 0.5) == 1.0);
  CHECK(std::isfinite(cka_rbf_similarity(c, c)));
}

TEST_CASE("cka loss gradient matches finite differences") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const int b = 3 + trial;
    const Matrix m = random_matrix(rng, b, 4), s = random_matrix(rng, b, 4);
    const GradResult r = cka_loss(m, s);
    CHECK(r.value == doctest::Approx(1.0 - cka_rbf_similarity(m, s)).epsilon(1e-12));
    auto f = [&](const oracle::Vec& x) { return cka_loss(Matrix(b, 4, x), s).value; };
    CHECK(oracle::relative_error(r.grad, oracle::central_difference(f, m.data)) < 1e-5);
  }
}

TEST_CASE("loss names round-trip and cka_linear is reserved") {
  for (auto k : {FeatureLoss::norm_l2, FeatureLoss::cosine, FeatureLoss::attention_transfer, FeatureLoss::cka_rbf})
    CHECK(parse_feature_loss(to_string(k)) == k);
  CHECK(parse_feature_loss("at") == FeatureLoss::attention_transfer);
  CHECK_THROWS_AS(parse_feature_loss("l3"), ConfigError);
  for (auto k : {PredictionLoss::none, PredictionLoss::kl, PredictionLoss::match_task_loss})
    CHECK(parse_prediction_loss(to_string(k)) == k);
  FeatureBatch a({1, 2, 3}, 1, 3);
  CHECK_THROWS_AS(feature_loss(FeatureLoss::cka_linear, a, a), NotImplementedError);
}

TEST_CASE("anneal schedule") {
  const AnnealSchedule s{4.0, 240000, true};
  CHECK(anneal_weight(s, 0) == 4.0);
  CHECK(anneal_weight(s, 120000) == 2.0);
  CHECK(anneal_weight(s, 240000) == 0.0);
  CHECK(anneal_weight(s, 500000) == 0.0);
  CHECK(anneal_weight({4.0, 1, false}, 999) == 4.0);
  CHECK_THROWS_AS(anneal_weight(s, -1), ConfigError);
  CHECK_THROWS_AS(anneal_weight({1.0, 0, true}, 3), ConfigError);
}

TEST_CASE("presets") {
  const DistillationConfig d = dense_preset();
  CHECK(d.lambda_feature("seg", 0) == 1.0);
  CHECK(d.lambda_feature("depth", 0) == 1.0);
  CHECK(d.lambda_feature("normals", 0) == 2.0);
  CHECK(d.lambda_prediction("seg", 0) == 0.0);
  CHECK(d.feature_loss == FeatureLoss::norm_l2);
  const DistillationConfig v = without_distillation(d);
  for (const auto& [t, w] : v.weights) {
    CHECK(v.lambda_feature(t, 0) == 0.0);
    CHECK(v.lambda_task(t) == 1.0);
    CHECK_FALSE(v.needs_teacher(t));
  }
  DistillationConfig bad = d;
  bad.weights["seg"].task = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
