#include "unirep/optim.hpp"

#include <cmath>
#include <numbers>

#include "unirep/errors.hpp"

namespace unirep {

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adadelta") return OptimizerKind::adadelta;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adadelta: return "adadelta";
  }
  return "?";
}

Optimizer::Optimizer(std::vector<Param*> params, OptimizerOptions opts)
    : params_(std::move(params)), opts_(opts) {
  for (Param* p : params_) {
    slots_.emplace_back(p->value.shape());
    slots_.emplace_back(p->value.shape());
  }
}

void Optimizer::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void Optimizer::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Param& p = *params_[k];
    if (p.frozen) continue;
    auto& s0 = slots_[2 * k].vec();
    auto& s1 = slots_[2 * k + 1].vec();
    auto& w = p.value.vec();
    const auto& g = p.grad.vec();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = static_cast<double>(g[i]) + opts_.weight_decay * w[i];
      switch (opts_.kind) {
        case OptimizerKind::sgd: {
          const double v = opts_.momentum * s0[i] + grad;
          s0[i] = static_cast<float>(v);
          w[i] = static_cast<float>(w[i] - lr * v);
          break;
        }
        case OptimizerKind::adam: {
          const double m = opts_.beta1 * s0[i] + (1.0 - opts_.beta1) * grad;
          const double v = opts_.beta2 * s1[i] + (1.0 - opts_.beta2) * grad * grad;
          s0[i] = static_cast<float>(m);
          s1[i] = static_cast<float>(v);
          w[i] = static_cast<float>(w[i] - lr * (m / bc1) / (std::sqrt(v / bc2) + opts_.eps));
          break;
        }
        case OptimizerKind::adadelta: {
          const double eg = opts_.rho * s0[i] + (1.0 - opts_.rho) * grad * grad;
          const double delta = std::sqrt(s1[i] + opts_.adadelta_eps) /
                               std::sqrt(eg + opts_.adadelta_eps) * grad;
          s0[i] = static_cast<float>(eg);
          s1[i] = static_cast<float>(opts_.rho * s1[i] + (1.0 - opts_.rho) * delta * delta);
          w[i] = static_cast<float>(w[i] - lr * delta);
          break;
        }
      }
    }
  }
}

double cosine_lr(double base, long iteration, long total) {
  if (total <= 0) return base;
  const double t = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::constant;
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "step_half") return LrSchedule::step_half;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

std::string to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::constant: return "constant";
    case LrSchedule::cosine: return "cosine";
    case LrSchedule::step_half: return "step_half";
  }
  return "?";
}

double scheduled_lr(LrSchedule s, double base, long iteration, long total) {
  switch (s) {
    case LrSchedule::constant: return base;
    case LrSchedule::cosine: return cosine_lr(base, iteration, total);
    case LrSchedule::step_half: return iteration * 2 >= total ? base * 0.5 : base;
  }
  return base;
}

}  // namespace unirep
