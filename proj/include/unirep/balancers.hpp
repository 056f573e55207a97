#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "unirep/layers.hpp"
#include "unirep/rng.hpp"

namespace unirep {

/// gradnorm, mgda, cagrad and imtl_h are reserved and raise NotImplementedError.
enum class BalancerKind { uniform, uncertainty, dwa, pcgrad, gradnorm, mgda, cagrad, imtl_h };
std::string to_string(BalancerKind k);
BalancerKind parse_balancer_kind(const std::string& s);
bool is_weighting(BalancerKind k);

inline constexpr double kDwaTemperature = 2.0;

/// Per-task weighting state owned by one training loop.
class Balancer {
 public:
  Balancer(BalancerKind kind, std::vector<std::string> task_ids, double dwa_temperature = kDwaTemperature);

  BalancerKind kind() const { return kind_; }
  const std::vector<std::string>& task_ids() const { return tasks_; }

  /// Finite, positive multipliers on lambda^t. Raises NumericalError on
  /// non-finite losses.
  std::map<std::string, double> task_weights(const std::map<std::string, double>& losses, long epoch) const;

  /// Uncertainty: adds the regularizer sum_t s_t to the objective value and
  /// accumulates d/ds_t of sum_t exp(-s_t) L_t + s_t into the log-variance
  /// gradients. `losses` are the lambda-weighted task losses.
  double add_regularizer(const std::map<std::string, double>& losses);

  /// Learnable log-variances s_t (uncertainty only), ordered like task_ids.
  std::vector<Param*> params();
  std::vector<NamedParam> named_params();

  /// DWA bookkeeping: mean task losses of a finished epoch.
  void end_epoch(const std::map<std::string, double>& mean_losses);
  const std::vector<std::map<std::string, double>>& history() const { return history_; }
  void set_history(std::vector<std::map<std::string, double>> h) { history_ = std::move(h); }

 private:
  BalancerKind kind_;
  std::vector<std::string> tasks_;
  double temperature_;
  std::vector<Param> log_vars_;
  std::vector<std::map<std::string, double>> history_;
};

/// PCGrad: each task gradient, visited in shuffled order, is projected off
/// every other task's original gradient it conflicts with.
struct SurgeryResult {
  std::vector<double> combined;
  std::vector<std::vector<double>> projected;  // per task, input order
  std::vector<int> order;                      // visiting order of the "other" tasks
};

SurgeryResult pcgrad_detailed(const std::vector<std::vector<double>>& grads, Rng& rng);
std::vector<double> pcgrad(const std::vector<std::vector<double>>& grads, Rng& rng);
/// Dispatch by strategy; only pcgrad performs surgery.
std::vector<double> surgery(BalancerKind strategy, const std::vector<std::vector<double>>& grads, std::uint64_t seed);

}  // namespace unirep
