#include "unirep/balancers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unirep/errors.hpp"

namespace unirep {

namespace {

constexpr BalancerKind kAll[] = {BalancerKind::uniform, BalancerKind::uncertainty, BalancerKind::dwa,
                                 BalancerKind::pcgrad,  BalancerKind::gradnorm,    BalancerKind::mgda,
                                 BalancerKind::cagrad,  BalancerKind::imtl_h};

void require_implemented(BalancerKind k) {
  switch (k) {
    case BalancerKind::gradnorm:
    case BalancerKind::mgda:
    case BalancerKind::cagrad:
    case BalancerKind::imtl_h: throw NotImplementedError("balancer '" + to_string(k) + "' is not implemented");
    default: return;
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string to_string(BalancerKind k) {
  switch (k) {
    case BalancerKind::uniform: return "uniform";
    case BalancerKind::uncertainty: return "uncertainty";
    case BalancerKind::dwa: return "dwa";
    case BalancerKind::pcgrad: return "pcgrad";
    case BalancerKind::gradnorm: return "gradnorm";
    case BalancerKind::mgda: return "mgda";
    case BalancerKind::cagrad: return "cagrad";
    case BalancerKind::imtl_h: return "imtl_h";
  }
  return "?";
}

BalancerKind parse_balancer_kind(const std::string& s) {
  for (auto k : kAll)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown balancer '" + s + "'");
}

bool is_weighting(BalancerKind k) { return k != BalancerKind::pcgrad; }

Balancer::Balancer(BalancerKind kind, std::vector<std::string> task_ids, double dwa_temperature)
    : kind_(kind), tasks_(std::move(task_ids)), temperature_(dwa_temperature) {
  require_implemented(kind);
  if (tasks_.empty()) throw ConfigError("balancer needs at least one task");
  if (kind == BalancerKind::dwa && !(dwa_temperature > 0.0)) throw ConfigError("dwa temperature must be positive");
  if (kind == BalancerKind::uncertainty) log_vars_.assign(tasks_.size(), Param(Shape{1}));
}

std::map<std::string, double> Balancer::task_weights(const std::map<std::string, double>& losses, long epoch) const {
  for (const auto& [task, v] : losses)
    if (!std::isfinite(v)) throw NumericalError("non-finite loss for task '" + task + "'", task + "/task");
  std::map<std::string, double> w;
  for (const auto& t : tasks_) w[t] = 1.0;
  switch (kind_) {
    case BalancerKind::uniform:
    case BalancerKind::pcgrad: break;
    case BalancerKind::uncertainty:
      for (std::size_t i = 0; i < tasks_.size(); ++i) w[tasks_[i]] = std::exp(-static_cast<double>(log_vars_[i].value[0]));
      break;
    case BalancerKind::dwa: {
      if (epoch < 2 || history_.size() < 2) break;
      const auto& last = history_[history_.size() - 1];
      const auto& prev = history_[history_.size() - 2];
      std::vector<double> r(tasks_.size());
      for (std::size_t i = 0; i < tasks_.size(); ++i) {
        const double den = prev.at(tasks_[i]);
        r[i] = (den > 0.0 ? last.at(tasks_[i]) / den : 1.0) / temperature_;
      }
      const double mx = *std::max_element(r.begin(), r.end());
      double z = 0.0;
      for (double& v : r) z += (v = std::exp(v - mx));
      for (std::size_t i = 0; i < tasks_.size(); ++i) w[tasks_[i]] = static_cast<double>(tasks_.size()) * r[i] / z;
      break;
    }
    default: require_implemented(kind_);
  }
  return w;
}

double Balancer::add_regularizer(const std::map<std::string, double>& losses) {
  if (kind_ != BalancerKind::uncertainty) return 0.0;
  double reg = 0.0;
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    const double s = log_vars_[i].value[0];
    const auto it = losses.find(tasks_[i]);
    const double l = it == losses.end() ? 0.0 : it->second;
    reg += s;
    log_vars_[i].grad[0] += static_cast<float>(1.0 - std::exp(-s) * l);
  }
  return reg;
}

std::vector<Param*> Balancer::params() {
  std::vector<Param*> out;
  for (auto& p : log_vars_) out.push_back(&p);
  return out;
}

std::vector<NamedParam> Balancer::named_params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < log_vars_.size(); ++i) out.push_back({"balancer.log_var." + tasks_[i], &log_vars_[i]});
  return out;
}

void Balancer::end_epoch(const std::map<std::string, double>& mean_losses) { history_.push_back(mean_losses); }

SurgeryResult pcgrad_detailed(const std::vector<std::vector<double>>& grads, Rng& rng) {
  if (grads.empty()) throw ConfigError("pcgrad needs at least one gradient");
  const std::size_t n = grads.front().size();
  if (n == 0) throw ConfigError("pcgrad got zero-length gradients");
  for (const auto& g : grads)
    if (g.size() != n) throw ShapeError("pcgrad gradients differ in length");

  SurgeryResult r;
  r.order.resize(grads.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  rng.shuffle(r.order);
  r.combined.assign(n, 0.0);
  std::vector<double> norms(grads.size());
  for (std::size_t j = 0; j < grads.size(); ++j) norms[j] = dot(grads[j], grads[j]);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    std::vector<double> g = grads[i];
    for (int j : r.order) {
      if (static_cast<std::size_t>(j) == i || norms[static_cast<std::size_t>(j)] == 0.0) continue;
      const auto& gj = grads[static_cast<std::size_t>(j)];
      const double d = dot(g, gj);
      if (d < 0.0) {
        const double c = d / norms[static_cast<std::size_t>(j)];
        for (std::size_t k = 0; k < n; ++k) g[k] -= c * gj[k];
      }
    }
    for (std::size_t k = 0; k < n; ++k) r.combined[k] += g[k];
    r.projected.push_back(std::move(g));
  }
  return r;
}

std::vector<double> pcgrad(const std::vector<std::vector<double>>& grads, Rng& rng) {
  return pcgrad_detailed(grads, rng).combined;
}

std::vector<double> surgery(BalancerKind strategy, const std::vector<std::vector<double>>& grads, std::uint64_t seed) {
  require_implemented(strategy);
  if (strategy == BalancerKind::pcgrad) {
    Rng rng(seed);
    return pcgrad(grads, rng);
  }
  if (grads.empty()) throw ConfigError("surgery needs at least one gradient");
  std::vector<double> sum(grads.front().size(), 0.0);
  for (const auto& g : grads) {
    if (g.size() != sum.size()) throw ShapeError("gradients differ in length");
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += g[k];
  }
  return sum;
}

}  // namespace unirep
