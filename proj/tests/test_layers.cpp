#include <doctest.h>

#include <cmath>

#include "unirep/layers.hpp"
#include "unirep/optim.hpp"
#include "unirep/rng.hpp"

using namespace unirep;

namespace {

Tensor random_tensor(Rng& rng, Shape s) {
  Tensor t(std::move(s));
  for (float& v : t.vec()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

// Directional finite difference of <net(x), r> against backward, for the input
// and every parameter.
void check_gradients(Sequential net, const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  SequentialCache cache;
  const Tensor y = net.forward(x, &cache);
  const Tensor r = random_tensor(rng, y.shape());
  for (auto& p : net.params()) p.param->zero_grad();
  const Tensor dx = net.backward(cache, r);

  const double h = 1e-3;
  const Tensor dir = random_tensor(rng, x.shape());
  Tensor xp = x, xm = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += static_cast<float>(h * dir[i]);
    xm[i] -= static_cast<float>(h * dir[i]);
  }
  const double num = (weighted_sum(net.forward(xp), r) - weighted_sum(net.forward(xm), r)) / (2 * h);
  CHECK(num == doctest::Approx(weighted_sum(dx, dir)).epsilon(1e-2));

  for (auto& p : net.params()) {
    const Tensor pd = random_tensor(rng, p.param->value.shape());
    const Tensor saved = p.param->value;
    for (std::size_t i = 0; i < pd.size(); ++i) p.param->value[i] = saved[i] + static_cast<float>(h * pd[i]);
    const double fp = weighted_sum(net.forward(x), r);
    for (std::size_t i = 0; i < pd.size(); ++i) p.param->value[i] = saved[i] - static_cast<float>(h * pd[i]);
    const double fm = weighted_sum(net.forward(x), r);
    p.param->value = saved;
    CHECK((fp - fm) / (2 * h) == doctest::Approx(weighted_sum(p.param->grad, pd)).epsilon(1e-2));
  }
}

}  // namespace

TEST_CASE("conv + relu + transposed conv gradients") {
  Rng rng(1);
  Sequential net;
  net.add(Conv2d(3, 4, 3, 2, 1));
  net.add(Relu{});
  net.add(ConvTranspose2d(4, 2, 2, 2, 0));
  net.init(rng);
  check_gradients(std::move(net), random_tensor(rng, {2, 3, 8, 8}), 11);
}

TEST_CASE("pooling + linear gradients") {
  Rng rng(2);
  Sequential net;
  net.add(Conv2d(2, 5, 3, 1, 1));
  net.add(GlobalAvgPool{});
  net.add(Linear(5, 3));
  net.init(rng);
  check_gradients(std::move(net), random_tensor(rng, {4, 2, 5, 5}), 12);
}

TEST_CASE("identity layers pass features through") {
  Rng rng(3);
  Conv2d c(6, 6, 1, 1, 0);
  c.set_identity();
  const Tensor x = random_tensor(rng, {2, 6, 3, 3});
  CHECK(c.forward(x, nullptr) == x);
  Linear l(4, 4);
  l.set_identity();
  const Tensor v = random_tensor(rng, {3, 4});
  CHECK(l.forward(v, nullptr) == v);
}

TEST_CASE("backward accumulates gradients") {
  Rng rng(4);
  Linear l(3, 2);
  l.init(rng);
  const Tensor x = random_tensor(rng, {2, 3}), dy = random_tensor(rng, {2, 2});
  LayerCache cache;
  l.forward(x, &cache);
  for (auto& p : l.params()) p.param->zero_grad();
  l.backward(cache, dy);
  const Tensor once = l.params()[0].param->grad;
  l.backward(cache, dy);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(l.params()[0].param->grad[i] == doctest::Approx(2 * once[i]));
}

TEST_CASE("optimizers decrease a quadratic and skip frozen parameters") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::adadelta}) {
    Param p(Shape{3});
    p.value.vec() = {1.0f, -2.0f, 3.0f};
    Param frozen(Shape{1});
    frozen.value[0] = 5.0f;
    frozen.frozen = true;
    OptimizerOptions o;
    o.kind = kind;
    Optimizer opt({&p, &frozen}, o);
    const double lr = kind == OptimizerKind::adadelta ? 1.0 : 0.05;
    double before = 0;
    for (float v : p.value.vec()) before += v * v;
    for (int s = 0; s < 50; ++s) {
      opt.zero_grad();
      for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2 * p.value[i];
      frozen.grad[0] = 1.0f;
      opt.step(lr);
    }
    double after = 0;
    for (float v : p.value.vec()) after += v * v;
    CHECK(after < before);
    CHECK(frozen.value[0] == 5.0f);
    CHECK(opt.steps() == 50);
  }
}

TEST_CASE("learning-rate schedules") {
  CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1));
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0));
  CHECK(scheduled_lr(LrSchedule::constant, 0.3, 77, 100) == 0.3);
  CHECK(scheduled_lr(LrSchedule::step_half, 0.2, 10, 100) == 0.2);
  CHECK(scheduled_lr(LrSchedule::step_half, 0.2, 60, 100) == doctest::Approx(0.1));
  CHECK(parse_lr_schedule(to_string(LrSchedule::cosine)) == LrSchedule::cosine);
  CHECK(parse_optimizer_kind(to_string(OptimizerKind::adadelta)) == OptimizerKind::adadelta);
}
