#pragma once

#include <string>
#include <vector>

#include "unirep/layers.hpp"

namespace unirep {

enum class OptimizerKind { sgd, adam, adadelta };

OptimizerKind parse_optimizer_kind(const std::string& s);
std::string to_string(OptimizerKind k);

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double weight_decay = 0.0;  // L2 penalty added to the gradient
  double momentum = 0.9;      // sgd
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adam
  double rho = 0.9, adadelta_eps = 1e-6;          // adadelta
};

/// First-order optimizer over a fixed parameter list. Frozen parameters are
/// skipped. State (moments, step count) is exposed for checkpointing.
class Optimizer {
 public:
  Optimizer(std::vector<Param*> params, OptimizerOptions opts);

  /// Applies one update with learning rate `lr` and leaves gradients intact.
  void step(double lr);
  void zero_grad();

  const OptimizerOptions& options() const { return opts_; }
  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  /// Per-parameter state slots, two per parameter.
  std::vector<Tensor>& slots() { return slots_; }
  const std::vector<Tensor>& slots() const { return slots_; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  OptimizerOptions opts_;
  std::vector<Tensor> slots_;
  long steps_ = 0;
};

/// Cosine annealing from `base` at iteration 0 to 0 at `total`.
double cosine_lr(double base, long iteration, long total);

enum class LrSchedule { constant, cosine, step_half };
LrSchedule parse_lr_schedule(const std::string& s);
std::string to_string(LrSchedule s);
/// step_half halves the rate once at the midpoint.
double scheduled_lr(LrSchedule s, double base, long iteration, long total);

}  // namespace unirep
