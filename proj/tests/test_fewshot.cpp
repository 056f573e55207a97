#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "unirep/errors.hpp"
#include "unirep/fewshot.hpp"

using namespace unirep;

namespace {

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

std::vector<int> labels_for(int n, int classes) {
  std::vector<int> l;
  for (int i = 0; i < n; ++i) l.push_back(i % classes);
  return l;
}

const DatasetSuite& domains() {
  static const DatasetSuite s = generate_domain_suite(3, 3, 10, 20);
  return s;
}

}  // namespace

TEST_CASE("ncc probabilities") {
  Rng rng(1);
  const Matrix support = random_matrix(rng, 6, 4);
  const auto labels = labels_for(6, 3);
  const Matrix p = ncc_predict(support, labels, support, 10.0);
  REQUIRE(p.rows == 6);
  REQUIRE(p.cols == 3);
  for (int i = 0; i < p.rows; ++i) {
    double s = 0;
    for (int j = 0; j < 3; ++j) s += p(i, j);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // one example per class: each support row is its own centroid
  const Matrix one = random_matrix(rng, 3, 5);
  const Matrix q = ncc_predict(one, {0, 1, 2}, one, 5.0);
  for (int i = 0; i < 3; ++i) {
    // logit of the own class is tau*(cos-1) = 0, the largest possible
    for (int j = 0; j < 3; ++j) CHECK(q(i, i) >= q(i, j));
  }
}

TEST_CASE("identity map leaves features bitwise unchanged") {
  Rng rng(2);
  const Matrix x = random_matrix(rng, 7, 5);
  CHECK(apply_map(x, identity_matrix(5)).data == x.data);
}

TEST_CASE("support loss gradients match finite differences") {
  Rng rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const Matrix support = random_matrix(rng, 9, 4);
    const auto labels = labels_for(9, 3);
    Matrix map = identity_matrix(4);
    for (double& v : map.data) v += 0.1 * rng.normal();
    const GradResult r = ncc_support_loss(support, labels, map, 3.0);
    auto f = [&](const oracle::Vec& x) { return ncc_support_loss(support, labels, Matrix(4, 4, x), 3.0).value; };
    CHECK(oracle::relative_error(r.grad, oracle::central_difference(f, map.data)) < 1e-6);

    const GradResult rf = ncc_support_loss_features(support, labels, 2.0);
    auto ff = [&](const oracle::Vec& x) { return ncc_support_loss_features(Matrix(9, 4, x), labels, 2.0).value; };
    CHECK(oracle::relative_error(rf.grad, oracle::central_difference(ff, support.data)) < 1e-6);
    CHECK(ncc_support_loss(support, labels, identity_matrix(4), 2.0).value ==
          doctest::Approx(rf.value).epsilon(1e-12));
  }
}

TEST_CASE("adaptation starts at the identity and lowers the support loss") {
  Rng rng(4);
  const Matrix support = random_matrix(rng, 15, 6);
  const auto labels = labels_for(15, 5);
  const FewShotAdapter zero = adapt_linear_map(support, labels, AdaptOptions{0, 0.1, MapOptimizer::adadelta, 1.0});
  CHECK(zero.map.data == identity_matrix(6).data);
  for (auto opt : {MapOptimizer::adadelta, MapOptimizer::adam, MapOptimizer::sgd}) {
    const FewShotAdapter a = adapt_linear_map(support, labels, AdaptOptions{40, 0.1, opt, 5.0});
    REQUIRE(a.loss_trace.size() == 41);
    CHECK(a.loss_trace.back() < a.loss_trace.front());
  }
  CHECK(parse_map_optimizer(to_string(MapOptimizer::adam)) == MapOptimizer::adam);
  CHECK_THROWS_AS(adapt_linear_map(support, labels, AdaptOptions{-1, 0.1, MapOptimizer::sgd, 1.0}), ConfigError);
}

TEST_CASE("episodes are disjoint and stay inside the domain") {
  const DatasetSuite& s = domains();
  const auto& pool = s.split(Split::meta_test);
  REQUIRE_FALSE(pool.empty());
  EpisodeOptions o;
  o.ways = 3;
  o.shots = 2;
  o.query_per_class = 2;
  const int d = s.domains.front().n_meta_classes > 0 ? 0 : 1;
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Episode e = sample_episode(s, d, o, rng);
    CHECK(e.ways == 3);
    CHECK(e.support.size() == 6);
    CHECK(e.query.size() == 6);
    std::set<int> all(e.support.begin(), e.support.end());
    for (int q : e.query) CHECK(all.insert(q).second);
    for (std::size_t i = 0; i < e.support.size(); ++i) {
      const auto& sample = pool[static_cast<std::size_t>(e.support[i])];
      CHECK(sample.domain == d);
      CHECK(sample.class_label == e.classes[static_cast<std::size_t>(e.support_labels[i])]);
    }
  }
  EpisodeOptions big = o;
  big.shots = 1000;
  CHECK_THROWS_AS(sample_episode(s, d, big, rng), SamplingError);
  EpisodeOptions wide = o;
  wide.ways = 1000;
  CHECK_THROWS_AS(sample_episode(s, d, wide, rng), SamplingError);
}

TEST_CASE("varying ways stay in range") {
  EpisodeOptions o;
  o.varying_ways = true;
  o.min_ways = 2;
  o.max_ways = 4;
  o.shots = 1;
  o.query_per_class = 1;
  Rng rng(6);
  std::set<int> seen;
  for (int i = 0; i < 30; ++i) {
    const Episode e = sample_episode(domains(), 0, o, rng);
    CHECK(e.ways >= 2);
    CHECK(e.ways <= 4);
    seen.insert(e.ways);
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("episode evaluation is reproducible") {
  const DatasetSuite& s = domains();
  const auto& pool = s.split(Split::meta_test);
  Matrix feats(static_cast<int>(pool.size()), 4);
  Rng rng(7);
  for (int i = 0; i < feats.rows; ++i)
    for (int j = 0; j < 4; ++j) feats(i, j) = pool[static_cast<std::size_t>(i)].class_label % 4 == j ? 1.0 + 0.1 * rng.normal() : 0.1 * rng.normal();
  FewShotOptions o;
  o.episode.ways = 3;
  o.episode.shots = 2;
  o.episode.query_per_class = 2;
  o.episodes = 10;
  o.seed = 42;
  const EpisodeEvaluation a = evaluate_episodes(s, 0, feats, o), b = evaluate_episodes(s, 0, feats, o);
  CHECK(a.accuracies == b.accuracies);
  CHECK(a.accuracies.size() == 10);
  CHECK(a.mean >= 0.0);
  CHECK(a.mean <= 1.0);
  Matrix wrong(3, 4);
  CHECK_THROWS_AS(evaluate_episodes(s, 0, wrong, o), ShapeError);
}

TEST_CASE("recall_at_k equals the exhaustive oracle") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix f = random_matrix(rng, 30, 3);
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) labels.push_back(static_cast<int>(rng.below(5)));
    const auto r = recall_at_k(f, labels, {1, 2, 5, 10});
    double prev = 0;
    for (int k : {1, 2, 5, 10}) {
      CHECK(r.at(k) == oracle::recall_at_k(to_rows(f), labels, k));
      CHECK(r.at(k) >= prev);
      prev = r.at(k);
    }
  }
}

TEST_CASE("recall ties go to the lower index and singletons miss") {
  // items 1 and 2 are identical to item 0; only item 2 shares its label
  Matrix f(4, 2, {1, 0, 1, 0, 1, 0, 0, 1});
  const auto r = recall_at_k(f, {7, 8, 7, 9}, {1, 2});
  // 0: neighbours 1,2 tie, 1 wins -> miss@1, hit@2; 2: 0 first -> hit; 1, 3 singletons
  CHECK(r.at(1) == 0.25);
  CHECK(r.at(2) == 0.5);
  CHECK_THROWS_AS(recall_at_k(f, {1, 1, 1, 1}, {4}), ConfigError);
  CHECK_THROWS_AS(recall_at_k(f, {1, 1, 1}, {1}), ShapeError);
}

TEST_CASE("confidence interval") {
  const auto [m, ci] = mean_ci95({0.5, 0.7, 0.6, 0.8});
  CHECK(m == doctest::Approx(0.65).epsilon(1e-12));
  const double sd = std::sqrt((0.0225 + 0.0025 + 0.0025 + 0.0225) / 3.0);
  CHECK(ci == doctest::Approx(1.96 * sd / 2.0).epsilon(1e-12));
  CHECK(mean_ci95({0.3}).second == 0.0);
}
