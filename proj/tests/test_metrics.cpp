#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "unirep/errors.hpp"
#include "unirep/metrics.hpp"

using namespace unirep;

TEST_CASE("miou over classes with a non-empty union") {
  const std::vector<int> gt{0, 0, 1, 1, 2, 2};
  const std::vector<int> pred{0, 1, 1, 1, 2, 0};
  // class0: inter 1, union 3; class1: 2/3; class2: 1/2; class3 absent
  CHECK(miou(pred, gt, 4) == doctest::Approx((1.0 / 3 + 2.0 / 3 + 0.5) / 3).epsilon(1e-12));
  CHECK(miou(gt, gt, 3) == 1.0);
}

TEST_CASE("abs_err and accuracy") {
  const std::vector<float> p{1.0f, 2.0f, 4.0f}, g{1.5f, 2.0f, 3.0f};
  CHECK(abs_err(p, g) == doctest::Approx(0.5).epsilon(1e-7));
  const std::vector<int> a{1, 2, 3, 4}, b{1, 0, 3, 0};
  CHECK(accuracy(a, b) == 0.5);
}

TEST_CASE("mean angle error in degrees") {
  // two pixels in planar layout: x plane, y plane, z plane
  const std::vector<float> gt{0, 0, 0, 0, 1, 1};
  const std::vector<float> pred{1, 0, 0, 0, 0, 2};
  CHECK(mean_angle_err(pred, gt, 2) == doctest::Approx(45.0).epsilon(1e-6));
  const std::vector<float> zero{0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(mean_angle_err(zero, gt, 2), NumericalError);
}

TEST_CASE("delta_mtl reproduces Table 1 SegNet rows") {
  const std::vector<TaskResult> stl{{"seg", 40.54, false}, {"depth", 0.6276, true}, {"normals", 24.28, true}};
  const std::vector<TaskResult> ours{{"seg", 45.52, false}, {"depth", 0.4912, true}, {"normals", 24.57, true}};
  const std::vector<TaskResult> uniform{{"seg", 40.22, false}, {"depth", 0.5196, true}, {"normals", 29.09, true}};
  CHECK(std::abs(delta_mtl(ours, stl) - 10.95) <= 0.02);
  CHECK(std::abs(delta_mtl(uniform, stl) - (-1.13)) <= 0.02);
  CHECK(delta_mtl(ours, stl) == doctest::Approx(oracle::delta_mtl({45.52, 0.4912, 24.57}, {40.54, 0.6276, 24.28},
                                                                   {false, true, true})).epsilon(1e-12));
}

TEST_CASE("delta_mtl matches tasks by id and validates baselines") {
  const std::vector<TaskResult> base{{"a", 2.0, false}, {"b", 1.0, true}};
  const std::vector<TaskResult> swapped{{"b", 0.5, true}, {"a", 3.0, false}};
  CHECK(delta_mtl(swapped, base) == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(delta_mtl(base, base) == 0.0);
  const std::vector<TaskResult> zero{{"a", 0.0, false}, {"b", 1.0, true}};
  CHECK_THROWS_AS(delta_mtl(base, zero), NumericalError);
  const std::vector<TaskResult> other{{"a", 1.0, false}, {"z", 1.0, true}};
  CHECK_THROWS(delta_mtl(other, base));
}

TEST_CASE("argmax over channels") {
  Tensor t({2, 3}, std::vector<float>{0.1f, 0.9f, 0.3f, 2.0f, -1.0f, 2.0f});
  CHECK(argmax_channels(t) == std::vector<int>{1, 0});
  Tensor d({1, 2, 1, 2}, std::vector<float>{0.0f, 5.0f, 1.0f, 4.0f});
  CHECK(argmax_channels(d) == std::vector<int>{1, 0});
}

TEST_CASE("accumulated metric equals the one-shot metric") {
  TaskSpec t;
  t.id = "depth";
  t.kind = TaskKind::dense;
  t.out_channels = 1;
  t.out_height = 2;
  t.out_width = 2;
  Label l1, l2;
  l1.floats = {0, 1, 2, 3};
  l2.floats = {1, 1, 1, 1};
  Tensor p1({1, 1, 2, 2}, std::vector<float>{0, 0, 0, 0});
  Tensor p2({1, 1, 2, 2}, std::vector<float>{1, 2, 1, 1});
  MetricAccumulator acc(t);
  acc.add(p1, {&l1});
  acc.add(p2, {&l2});
  Tensor both({2, 1, 2, 2}, std::vector<float>{0, 0, 0, 0, 1, 2, 1, 1});
  CHECK(acc.value() == doctest::Approx(task_metric(t, both, {&l1, &l2})).epsilon(1e-12));
  CHECK(acc.value() == doctest::Approx(7.0 / 8).epsilon(1e-7));
}
