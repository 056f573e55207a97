#include "unirep/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "unirep/errors.hpp"
#include "unirep/metrics.hpp"
#include "unirep/task_losses.hpp"

namespace unirep {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::teachers: return "teachers";
    case Stage::universal: return "universal";
    case Stage::groups: return "groups";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  for (auto st : {Stage::teachers, Stage::universal, Stage::groups})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown stage '" + s + "'");
}

namespace {

bool uses_cka(const RunConfig& cfg, const std::vector<TaskSpec>& tasks) {
  if (cfg.distill.feature_loss != FeatureLoss::cka_rbf) return false;
  for (const auto& t : tasks)
    if (cfg.distill.of(t.id).feature.initial > 0.0) return true;
  return false;
}

json optim_json(const OptimSettings& o) {
  return {{"optimizer", to_string(o.kind)}, {"lr", o.lr}, {"weight_decay", o.weight_decay},
          {"schedule", to_string(o.schedule)}};
}

json schedule_json(const AnnealSchedule& s) {
  return {{"initial", s.initial}, {"iterations", s.iterations}, {"active", s.active}};
}

}  // namespace

void RunConfig::validate(const DatasetSuite& suite) const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be >= 1");
  if (channels < 8) throw ConfigError("channels must be >= 8");
  if (!(main.lr > 0.0) || !(adapter_optim.lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (main.weight_decay < 0.0 || adapter_optim.weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  distill.validate();
  for (const auto& [task, w] : distill.weights) {
    if (suite.task_index(task) < 0) throw ConfigError("distillation weights name unknown task '" + task + "'");
  }
  if (suite.mode == SuiteMode::mdl && stage != Stage::teachers) {
    const int n = static_cast<int>(suite.tasks.size());
    std::optional<int> anchor;
    if (anchor_task) {
      anchor = suite.task_index(*anchor_task);
      if (*anchor < 0) throw ConfigError("anchor task '" + *anchor_task + "' not in suite");
    }
    const auto quota = domain_quota(n, batch_size, anchor, anchor_share);
    if (uses_cka(*this, suite.tasks)) {
      for (std::size_t d = 0; d < quota.size(); ++d) {
        if (quota[d] < 3) {
          throw ConfigError("CKA distillation needs >= 3 samples per domain in every batch; domain '" +
                            suite.tasks[d].id + "' gets " + std::to_string(quota[d]) + " (batch_size " +
                            std::to_string(batch_size) + ")");
        }
      }
    }
  }
}

json to_json(const RunConfig& cfg) {
  json weights = json::object();
  for (const auto& [task, w] : cfg.distill.weights) {
    weights[task] = {{"task", w.task}, {"feature", schedule_json(w.feature)}, {"prediction", schedule_json(w.prediction)}};
  }
  return {{"stage", to_string(cfg.stage)},
          {"channels", cfg.channels},
          {"adapter", to_string(cfg.adapter)},
          {"main_optimizer", optim_json(cfg.main)},
          {"adapter_optimizer", optim_json(cfg.adapter_optim)},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"eval_batch_size", cfg.eval_batch_size},
          {"distill",
           {{"feature_loss", to_string(cfg.distill.feature_loss)},
            {"prediction_loss", to_string(cfg.distill.prediction_loss)},
            {"bandwidth_frac", cfg.distill.bandwidth_frac},
            {"weights", weights}}},
          {"balancer", to_string(cfg.balancer)},
          {"seed", cfg.seed},
          {"anchor_task", cfg.anchor_task ? json(*cfg.anchor_task) : json(nullptr)},
          {"anchor_share", cfg.anchor_share},
          {"flip_augment", cfg.flip_augment},
          {"jobs", cfg.jobs}};
}

// --- augmentation ------------------------------------------------------------------

void flip_batch(Batch& batch, const DatasetSuite& suite, Rng& rng) {
  const int n = batch.images.dim(0), c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
  std::vector<char> flip(static_cast<std::size_t>(n));
  for (auto& f : flip) f = rng.uniform() < 0.5;
  auto flip_plane = [](auto* p, int hh, int ww) {
    for (int y = 0; y < hh; ++y) std::reverse(p + static_cast<std::ptrdiff_t>(y) * ww, p + static_cast<std::ptrdiff_t>(y + 1) * ww);
  };
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    if (!flip[static_cast<std::size_t>(i)]) continue;
    for (int ch = 0; ch < c; ++ch) flip_plane(batch.images.data() + (static_cast<std::size_t>(i) * c + ch) * plane, h, w);
  }
  for (auto& [task_id, rows] : batch.task_rows) {
    const TaskSpec& task = suite.task(task_id);
    if (task.kind != TaskKind::dense) continue;
    auto& labels = batch.labels.at(task_id);
    const std::size_t lp = static_cast<std::size_t>(task.out_height) * task.out_width;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!flip[static_cast<std::size_t>(rows[r])]) continue;
      auto owned = std::make_shared<Label>(*labels[r]);
      if (!owned->ints.empty()) flip_plane(owned->ints.data(), task.out_height, task.out_width);
      for (std::size_t ch = 0; ch * lp < owned->floats.size(); ++ch) {
        float* p = owned->floats.data() + ch * lp;
        flip_plane(p, task.out_height, task.out_width);
        if (task.loss == TaskLoss::cosine_normals && ch == 0)
          for (std::size_t k = 0; k < lp; ++k) p[k] = -p[k];
      }
      labels[r] = owned.get();
      batch.owned_labels.push_back(std::move(owned));
    }
  }
}

// --- evaluation --------------------------------------------------------------------

namespace {

struct SplitEval {
  std::map<std::string, double> losses;
  std::map<std::string, double> metrics;
};

using Predictor = std::function<std::map<std::string, Tensor>(const Tensor&)>;

SplitEval evaluate_split(const DatasetSuite& suite, const std::vector<TaskSpec>& tasks, const Predictor& predict,
                         Split split, int batch_size) {
  const auto& samples = suite.split(split);
  SplitEval out;
  std::map<std::string, MetricAccumulator> acc;
  std::map<std::string, double> loss_sum;
  std::map<std::string, long> rows_seen;
  for (const auto& t : tasks) acc.emplace(t.id, MetricAccumulator(t));
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<int> rows;
    for (std::size_t i = start; i < std::min(samples.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      bool any = false;
      for (const auto& t : tasks) any = any || samples[i].labels.contains(t.id);
      if (any) rows.push_back(static_cast<int>(i));
    }
    if (rows.empty()) continue;
    const Batch b = make_batch(suite, split, rows);
    const auto preds = predict(b.images);
    for (const auto& t : tasks) {
      const auto tr = b.task_rows.find(t.id);
      if (tr == b.task_rows.end()) continue;
      const Tensor p = preds.at(t.id).gather_rows(tr->second);
      const auto& labels = b.labels.at(t.id);
      loss_sum[t.id] += task_loss(t, p, labels).value * static_cast<double>(labels.size());
      rows_seen[t.id] += static_cast<long>(labels.size());
      acc.at(t.id).add(p, labels);
    }
  }
  for (const auto& t : tasks) {
    if (rows_seen[t.id] == 0) throw IterationError("split '" + to_string(split) + "' has no samples for task '" + t.id + "'");
    out.losses[t.id] = loss_sum[t.id] / static_cast<double>(rows_seen[t.id]);
    out.metrics[t.id] = acc.at(t.id).value();
  }
  return out;
}

Predictor universal_predictor(const UniversalModel& model) {
  return [&model](const Tensor& x) { return forward_universal(model, x, false).predictions; };
}

}  // namespace

std::map<std::string, double> evaluate_universal(const DatasetSuite& suite, const UniversalModel& model, Split split,
                                                 int batch_size) {
  return evaluate_split(suite, model.tasks(), universal_predictor(model), split, batch_size).metrics;
}

double evaluate_single(const DatasetSuite& suite, const SingleTaskModel& model, Split split, int batch_size) {
  const TaskSpec& task = model.decoder.task();
  Predictor p = [&](const Tensor& x) { return std::map<std::string, Tensor>{{task.id, model.predict(x)}}; };
  return evaluate_split(suite, {task}, p, split, batch_size).metrics.at(task.id);
}

// --- training loop -----------------------------------------------------------------

namespace {

/// Teacher activations for every training sample, computed once per run.
class TeacherCache {
 public:
  TeacherCache(const DatasetSuite& suite, const TeacherSet& teachers, const DistillationConfig& cfg,
               const std::vector<TaskSpec>& tasks, int batch_size) {
    const auto& samples = suite.split(Split::train);
    for (const auto& t : tasks) {
      if (!cfg.needs_teacher(t.id)) continue;
      const auto it = teachers.find(t.id);
      if (it == teachers.end() || it->second == nullptr) throw ConfigError("no teacher for task '" + t.id + "'");
      const bool want_pred = cfg.prediction_loss != PredictionLoss::none && cfg.of(t.id).prediction.initial > 0.0;
      Entry e;
      e.row_of.assign(samples.size(), -1);
      std::vector<int> idx;
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].labels.contains(t.id)) {
          e.row_of[i] = static_cast<int>(idx.size());
          idx.push_back(static_cast<int>(i));
        }
      std::vector<Tensor> feats, preds;
      for (std::size_t s = 0; s < idx.size(); s += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), s + static_cast<std::size_t>(batch_size));
        const Tensor x = stack_images(samples, std::span<const int>(idx.data() + s, end - s));
        Tensor f = it->second->encoder.forward(x);
        if (want_pred) preds.push_back(it->second->decoder.forward(f));
        feats.push_back(std::move(f));
      }
      e.feature = concat(feats);
      if (want_pred) e.prediction = concat(preds);
      cache_.emplace(t.id, std::move(e));
    }
  }

  TeacherBatch lookup(const Batch& b) const {
    TeacherBatch out;
    for (const auto& [task, e] : cache_) {
      const auto tr = b.task_rows.find(task);
      if (tr == b.task_rows.end()) continue;
      std::vector<int> rows;
      for (int r : tr->second) rows.push_back(e.row_of.at(static_cast<std::size_t>(b.indices[static_cast<std::size_t>(r)])));
      TeacherOutputs o;
      o.feature = e.feature.gather_rows(rows);
      if (!e.prediction.empty()) o.prediction = e.prediction.gather_rows(rows);
      out.emplace(task, std::move(o));
    }
    return out;
  }

 private:
  struct Entry {
    Tensor feature, prediction;
    std::vector<int> row_of;
  };

  static Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) return {};
    Shape s = parts.front().shape();
    int rows = 0;
    for (const auto& p : parts) rows += p.dim(0);
    s[0] = rows;
    Tensor out(s);
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.vec().begin(), p.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
      off += p.size();
    }
    return out;
  }

  std::map<std::string, Entry> cache_;
};

OptimizerOptions optimizer_options(const OptimSettings& s) {
  OptimizerOptions o;
  o.kind = s.kind;
  o.lr = s.lr;
  o.weight_decay = s.weight_decay;
  return o;
}

std::string epoch_dir_name(int epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
  return os.str();
}

void add_optimizer_state(CheckpointData& d, const std::string& name, const Optimizer& opt) {
  for (std::size_t i = 0; i < opt.slots().size(); ++i) d.tensors.emplace_back("optim." + name + "." + std::to_string(i), opt.slots()[i]);
  d.extra["optimizer_steps"][name] = opt.steps();
}

void restore_optimizer_state(const CheckpointData& d, const std::string& name, Optimizer& opt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : d.tensors) by_name[n] = &t;
  for (std::size_t i = 0; i < opt.slots().size(); ++i) {
    const auto it = by_name.find("optim." + name + "." + std::to_string(i));
    if (it == by_name.end() || it->second->shape() != opt.slots()[i].shape()) {
      throw IntegrityError("checkpoint lacks optimizer state optim." + name + "." + std::to_string(i));
    }
    opt.slots()[i] = *it->second;
  }
  opt.set_steps(d.extra.at("optimizer_steps").at(name).get<long>());
}

std::vector<int> newest_epoch(const fs::path& ckpt_dir) {
  std::vector<int> epochs;
  if (!fs::exists(ckpt_dir)) return epochs;
  for (const auto& e : fs::directory_iterator(ckpt_dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("epoch_", 0) == 0 && fs::exists(e.path() / "manifest.json")) epochs.push_back(std::stoi(n.substr(6)));
  }
  std::sort(epochs.begin(), epochs.end());
  return epochs;
}

/// Keeps log lines up to (and including) `iteration`; epoch-level lines
/// are kept for epochs below `epoch`.
void truncate_log(const fs::path& path, long iteration, int epoch) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("iteration") && j.at("iteration").get<long>() > iteration) continue;
    if (j.contains("split") && j.at("epoch").get<int>() >= epoch) continue;
    keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> flatten_grads(const std::vector<NamedParam>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.param->grad.vec().begin(), p.param->grad.vec().end());
  return out;
}

void zero_grads(const std::vector<NamedParam>& params) {
  for (const auto& p : params) p.param->zero_grad();
}

}  // namespace

TrainResult train_model(const DatasetSuite& suite, UniversalModel& model, const TeacherSet& teachers,
                        const RunConfig& cfg, const fs::path& run_dir, const std::optional<std::string>& only_task) {
  cfg.validate(suite);
  TrainResult res;
  res.run_dir = run_dir;
  const fs::path ckpt_dir = run_dir / "checkpoints";
  const fs::path log_path = run_dir / "metrics.jsonl";
  fs::create_directories(run_dir);
  write_json(run_dir / "config.json", to_json(cfg));

  const std::vector<TaskSpec>& tasks = model.tasks();
  const std::vector<std::string>& task_ids = model.task_ids();
  const std::size_t min_rows = uses_cka(cfg, tasks) ? 3 : 1;

  BatchOptions bopts;
  bopts.split = Split::train;
  bopts.batch_size = cfg.batch_size;
  bopts.seed = derive_seed(cfg.seed, "train/batches");
  bopts.anchor_task = cfg.anchor_task;
  bopts.anchor_share = cfg.anchor_share;
  bopts.only_task = only_task;
  if (suite.mode == SuiteMode::mdl && task_ids.size() < suite.tasks.size()) bopts.task_subset = task_ids;
  auto usable = [&](const Batch& b) {
    for (const auto& [t, rows] : b.task_rows)
      if (rows.size() < min_rows && std::find(task_ids.begin(), task_ids.end(), t) != task_ids.end()) return false;
    return !b.task_rows.empty();
  };
  long per_epoch = 0;
  {
    BatchStream s(suite, bopts);
    while (auto b = s.next()) per_epoch += usable(*b);
  }
  if (per_epoch == 0) throw IterationError("training split yields no usable batches");
  const long total_iters = per_epoch * cfg.epochs;

  const bool augment = cfg.flip_augment && suite.mode == SuiteMode::mtl;
  std::optional<TeacherCache> cache;
  if (!augment) cache.emplace(suite, teachers, cfg.distill, tasks, cfg.eval_batch_size);

  Optimizer main_opt(model.main_params(), optimizer_options(cfg.main));
  Optimizer adapter_opt(model.adapter_params(), optimizer_options(cfg.adapter_optim));
  Balancer balancer(cfg.balancer, task_ids);
  OptimSettings bal_settings = cfg.main;
  bal_settings.weight_decay = 0.0;
  Optimizer balancer_opt(balancer.params(), optimizer_options(bal_settings));
  const auto encoder_params = model.encoder.params();

  int start_epoch = 0;
  long iter = 0;
  res.best_val = std::numeric_limits<double>::infinity();
  if (cfg.resume) {
    const auto epochs = newest_epoch(ckpt_dir);
    if (!epochs.empty()) {
      const int e = epochs.back();
      const CheckpointData d = read_checkpoint(ckpt_dir / epoch_dir_name(e));
      assign_params(model.params(), d);
      assign_params(balancer.named_params(), d);
      restore_optimizer_state(d, "main", main_opt);
      restore_optimizer_state(d, "adapter", adapter_opt);
      restore_optimizer_state(d, "balancer", balancer_opt);
      const json& st = d.extra.at("state");
      start_epoch = st.at("epoch").get<int>() + 1;
      iter = st.at("iteration").get<long>();
      res.best_epoch = st.at("best_epoch").get<int>();
      res.best_val = st.at("best_val").get<double>();
      res.val_metrics = st.at("best_metrics").get<std::map<std::string, double>>();
      balancer.set_history(st.at("balancer_history").get<std::vector<std::map<std::string, double>>>());
      res.epochs_completed = start_epoch;
      res.last_checkpoint = ckpt_dir / epoch_dir_name(e);
      truncate_log(log_path, iter - 1, start_epoch);
    }
  }
  if (start_epoch == 0 && iter == 0) {
    fs::remove_all(ckpt_dir);
    std::ofstream(log_path, std::ios::trunc);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());
  auto emit = [&](json j) { log << j.dump() << '\n'; };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    bopts.epoch = epoch;
    BatchStream stream(suite, bopts);
    std::map<std::string, double> loss_sum;
    long steps_in_epoch = 0;
    while (auto next = stream.next()) {
      Batch& batch = *next;
      if (!usable(batch)) continue;
      if (augment) {
        Rng frng(derive_seed(cfg.seed, "train/flip", static_cast<std::uint64_t>(iter)));
        flip_batch(batch, suite, frng);
      }
      const TeacherBatch tb = augment ? teacher_outputs(teachers, batch, cfg.distill, task_ids) : cache->lookup(batch);

      main_opt.zero_grad();
      adapter_opt.zero_grad();
      balancer_opt.zero_grad();
      const TaskScale scale = balancer.task_weights({}, epoch);
      ObjectiveGradients g = objective_backward(batch, model, tb, cfg.distill, iter, &scale);
      std::map<std::string, double> weighted;
      for (const auto& t : g.result.terms)
        if (t.term == "task") weighted[t.task] = cfg.distill.lambda_task(t.task) * t.value;
      const double total = g.result.total + balancer.add_regularizer(weighted);
      if (!std::isfinite(total)) throw NumericalError("non-finite training objective at iteration " + std::to_string(iter), "total");

      if (cfg.balancer == BalancerKind::pcgrad && g.task_feature_grads.size() > 1) {
        std::vector<std::vector<double>> per_task;
        for (const auto& [task, df] : g.task_feature_grads) {
          zero_grads(encoder_params);
          model.encoder.backward(g.encoder_cache, df);
          per_task.push_back(flatten_grads(encoder_params));
        }
        Rng prng(derive_seed(cfg.seed, "train/pcgrad", static_cast<std::uint64_t>(iter)));
        const std::vector<double> combined = pcgrad(per_task, prng);
        zero_grads(encoder_params);
        model.encoder.backward(g.encoder_cache, g.distill_feature_grad);
        std::size_t off = 0;
        for (const auto& p : encoder_params)
          for (float& v : p.param->grad.vec()) v += static_cast<float>(combined[off++]);
      } else {
        Tensor df = g.distill_feature_grad;
        for (const auto& [task, d] : g.task_feature_grads) df += d;
        model.encoder.backward(g.encoder_cache, df);
      }

      main_opt.step(scheduled_lr(cfg.main.schedule, cfg.main.lr, iter, total_iters));
      adapter_opt.step(scheduled_lr(cfg.adapter_optim.schedule, cfg.adapter_optim.lr, iter, total_iters));
      balancer_opt.step(scheduled_lr(cfg.main.schedule, cfg.main.lr, iter, total_iters));

      for (const auto& t : g.result.terms) {
        if (t.term == "task") loss_sum[t.task] += t.value;
        if (cfg.log_iterations) {
          emit({{"iteration", iter}, {"epoch", epoch}, {"task", t.task}, {"term", t.term}, {"value", t.value},
                {"weight", t.weight}});
        }
      }
      if (cfg.log_iterations && cfg.balancer != BalancerKind::uniform && cfg.balancer != BalancerKind::pcgrad) {
        for (const auto& [task, w] : scale)
          emit({{"iteration", iter}, {"epoch", epoch}, {"task", task}, {"term", "balancer_weight"}, {"value", w}});
      }
      emit({{"iteration", iter}, {"epoch", epoch}, {"task", "*"}, {"term", "total"}, {"value", total}});
      res.loss_trace.emplace_back(iter, total);
      ++iter;
      ++steps_in_epoch;
      if (cfg.stop_after_iteration >= 0 && iter > cfg.stop_after_iteration) {
        res.interrupted = true;
        res.iterations = iter;
        return res;
      }
    }
    std::map<std::string, double> mean_losses;
    for (const auto& [t, s] : loss_sum) mean_losses[t] = s / static_cast<double>(std::max<long>(1, steps_in_epoch));
    balancer.end_epoch(mean_losses);

    const SplitEval val = evaluate_split(suite, tasks, universal_predictor(model), Split::val, cfg.eval_batch_size);
    double val_score = 0.0;
    for (const auto& [t, l] : val.losses) {
      val_score += l;
      emit({{"epoch", epoch}, {"split", "val"}, {"task", t}, {"term", "val_loss"}, {"value", l}});
      emit({{"epoch", epoch}, {"split", "val"}, {"task", t}, {"term", "val_metric"}, {"value", val.metrics.at(t)}});
    }
    if (!std::isfinite(val_score)) throw NumericalError("non-finite validation loss", "val");
    const bool best = val_score < res.best_val;
    if (best) {
      res.best_val = val_score;
      res.best_epoch = epoch;
      res.val_metrics = val.metrics;
      save_model(ckpt_dir / "best", model, "best", {{"epoch", epoch}});
    }
    res.best_checkpoint = ckpt_dir / "best";

    CheckpointData d;
    d.name = epoch_dir_name(epoch);
    d.architecture = architecture_of(model);
    d.seed = cfg.seed;
    for (const auto& p : model.params()) d.tensors.emplace_back(p.name, p.param->value);
    for (const auto& p : balancer.named_params()) d.tensors.emplace_back(p.name, p.param->value);
    add_optimizer_state(d, "main", main_opt);
    add_optimizer_state(d, "adapter", adapter_opt);
    add_optimizer_state(d, "balancer", balancer_opt);
    d.extra["checksum"] = checksum(model);
    d.extra["state"] = {{"epoch", epoch},
                        {"iteration", iter},
                        {"best_epoch", res.best_epoch},
                        {"best_val", res.best_val},
                        {"best_metrics", res.val_metrics},
                        {"balancer_history", balancer.history()}};
    write_checkpoint(ckpt_dir / epoch_dir_name(epoch), d);
    res.last_checkpoint = ckpt_dir / epoch_dir_name(epoch);
    res.epochs_completed = epoch + 1;
    log.flush();
  }
  res.iterations = iter;
  res.best_checkpoint = ckpt_dir / "best";
  {
    const CheckpointData best = read_checkpoint(res.best_checkpoint);
    assign_params(model.params(), best);
    if (best.extra.at("checksum").get<std::uint64_t>() != checksum(model)) {
      throw IntegrityError("checksum mismatch for checkpoint " + res.best_checkpoint.string());
    }
  }
  write_json(run_dir / "report.json", {{"best_epoch", res.best_epoch},
                                       {"best_val_loss", res.best_val},
                                       {"val_metrics", res.val_metrics},
                                       {"iterations", res.iterations},
                                       {"checksum", checksum(model)}});
  return res;
}

// --- stages ------------------------------------------------------------------------

void run_jobs(const std::vector<std::function<void()>>& work, int jobs) {
  if (jobs <= 1 || work.size() <= 1) {
    for (const auto& w : work) w();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(jobs), work.size());
  for (std::size_t i = 0; i < n; ++i) {
    pool.emplace_back([&]() {
      for (std::size_t k = next++; k < work.size(); k = next++) {
        try {
          work[k]();
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

namespace {

EncoderMode mode_of(const DatasetSuite& suite) {
  return suite.mode == SuiteMode::mtl ? EncoderMode::dense : EncoderMode::classification;
}

fs::path teacher_dir(const fs::path& out, const std::string& task) { return out / "teachers" / task; }

}  // namespace

std::map<std::string, TeacherRecord> train_teachers(const DatasetSuite& suite, const RunConfig& cfg) {
  RunConfig tcfg = cfg;
  tcfg.stage = Stage::teachers;
  tcfg.adapter = AdapterKind::identity;
  tcfg.balancer = BalancerKind::uniform;
  tcfg.anchor_task.reset();
  tcfg.distill = without_distillation(cfg.distill);
  tcfg.jobs = 1;
  tcfg.validate(suite);

  std::map<std::string, TeacherRecord> records;
  std::mutex mu;
  std::vector<std::function<void()>> work;
  for (const auto& task : suite.tasks) {
    work.push_back([&, task]() {
      RunConfig jcfg = tcfg;
      jcfg.distill.weights.clear();
      jcfg.distill.weights[task.id] = TaskWeights{1.0, {}, {}};
      const EncoderSpec spec{mode_of(suite), cfg.channels, derive_seed(cfg.seed, "teacher/" + task.id)};
      UniversalModel m({task}, spec, AdapterKind::identity);
      const fs::path dir = teacher_dir(cfg.out_dir, task.id);
      const TrainResult tr = train_model(suite, m, {}, jcfg, dir, task.id);
      SingleTaskModel teacher = extract_task_model(m, task.id);
      TeacherRecord rec;
      rec.task = task.id;
      rec.checkpoint = dir / "model";
      rec.checksum = checksum(teacher);
      rec.val_metrics = tr.val_metrics;
      save_model(rec.checkpoint, teacher, "teacher-" + task.id, {{"best_epoch", tr.best_epoch}});
      std::lock_guard<std::mutex> lock(mu);
      records.emplace(task.id, rec);
    });
  }
  run_jobs(work, cfg.jobs);

  json manifest = json::object();
  for (const auto& [id, r] : records) {
    manifest[id] = {{"checkpoint", fs::relative(r.checkpoint, cfg.out_dir).generic_string()},
                    {"checksum", r.checksum},
                    {"val_metric", r.val_metrics.at(id)}};
  }
  write_json(cfg.out_dir / "teachers" / "teachers.json", manifest);
  return records;
}

std::map<std::string, SingleTaskModel> load_teachers(const fs::path& out_dir, const std::vector<std::string>& task_ids) {
  std::map<std::string, SingleTaskModel> out;
  for (const auto& id : task_ids) {
    const fs::path dir = teacher_dir(out_dir, id) / "model";
    if (!fs::exists(dir / "manifest.json")) {
      throw DependencyError("teacher checkpoint for task '" + id + "' not found at " + dir.string() +
                            "; run train-teachers first");
    }
    out.emplace(id, load_single_task(dir));
  }
  return out;
}

TeacherSet teacher_set(const std::map<std::string, SingleTaskModel>& teachers) {
  TeacherSet s;
  for (const auto& [id, m] : teachers) s[id] = &m;
  return s;
}

SingleTaskModel extract_task_model(const UniversalModel& model, const std::string& task) {
  const auto it = model.decoders.find(task);
  if (it == model.decoders.end()) throw ConfigError("model has no task '" + task + "'");
  SingleTaskModel m(it->second.task(), model.encoder.spec());
  m.encoder = model.encoder;
  m.decoder = it->second;
  freeze_and_checksum(m);
  return m;
}

UniversalRun train_universal(const DatasetSuite& suite, const RunConfig& cfg,
                             const std::map<std::string, SingleTaskModel>& teachers, const fs::path& run_dir) {
  UniversalRun run;
  for (const auto& [id, m] : teachers) run.teacher_checksums_before[id] = checksum(m);
  const EncoderSpec spec{mode_of(suite), cfg.channels, derive_seed(cfg.seed, "student")};
  std::vector<TaskSpec> tasks;
  for (const auto& t : suite.tasks) tasks.push_back(t);
  UniversalModel student(tasks, spec, cfg.adapter);
  RunConfig ucfg = cfg;
  run.train = train_model(suite, student, teacher_set(teachers), ucfg, run_dir);
  for (const auto& [id, m] : teachers) {
    run.teacher_checksums_after[id] = checksum(m);
    if (run.teacher_checksums_after[id] != run.teacher_checksums_before[id]) {
      throw IntegrityError("teacher '" + id + "' changed during stage-2 training");
    }
  }
  if (run.train.interrupted) return run;
  run.model_checkpoint = run_dir / "model";
  json tc = json::object();
  for (const auto& [id, c] : run.teacher_checksums_before) tc[id] = c;
  save_model(run.model_checkpoint, student, "universal", {{"teacher_checksums", tc}});
  return run;
}

std::vector<TaskGroup> plan_groups(const std::vector<std::string>& task_ids, int n_groups, std::uint64_t seed,
                                   const std::optional<std::string>& anchor) {
  const int n = static_cast<int>(task_ids.size());
  if (n_groups < 1) throw ConfigError("n_groups must be >= 1");
  if (n_groups > n) throw ConfigError("n_groups (" + std::to_string(n_groups) + ") exceeds task count " + std::to_string(n));
  std::vector<std::string> pool;
  std::vector<TaskGroup> groups;
  if (anchor) {
    if (std::find(task_ids.begin(), task_ids.end(), *anchor) == task_ids.end()) {
      throw ConfigError("anchor task '" + *anchor + "' is not in the task list");
    }
    if (n_groups == 1 && n > 1) throw ConfigError("an anchor singleton needs n_groups >= 2");
    groups.push_back({"group0", {*anchor}, {}});
    for (const auto& t : task_ids)
      if (t != *anchor) pool.push_back(t);
  } else {
    pool = task_ids;
  }
  Rng rng(derive_seed(seed, "groups"));
  rng.shuffle(pool);
  const int k = n_groups - static_cast<int>(groups.size());
  std::size_t pos = 0;
  for (int g = 0; g < k; ++g) {
    const std::size_t size = pool.size() / static_cast<std::size_t>(k) + (static_cast<std::size_t>(g) < pool.size() % static_cast<std::size_t>(k));
    TaskGroup grp{"group" + std::to_string(groups.size()), {}, {}};
    grp.members.assign(pool.begin() + static_cast<std::ptrdiff_t>(pos), pool.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
    std::sort(grp.members.begin(), grp.members.end(), [&](const std::string& a, const std::string& b) {
      return std::find(task_ids.begin(), task_ids.end(), a) < std::find(task_ids.begin(), task_ids.end(), b);
    });
    groups.push_back(std::move(grp));
  }
  return groups;
}

GroupedRun train_grouped(const DatasetSuite& suite, const RunConfig& cfg,
                         const std::map<std::string, SingleTaskModel>& teachers, std::vector<TaskGroup> groups,
                         const fs::path& run_dir) {
  std::vector<std::string> covered;
  for (const auto& g : groups) {
    if (g.members.empty()) throw ConfigError("group '" + g.id + "' is empty");
    for (const auto& t : g.members) {
      if (!teachers.contains(t)) throw ConfigError("no teacher for group member '" + t + "'");
      if (std::find(covered.begin(), covered.end(), t) != covered.end()) throw ConfigError("task '" + t + "' is in two groups");
      covered.push_back(t);
    }
  }
  if (covered.size() != suite.tasks.size()) throw ConfigError("groups do not cover every task");

  std::vector<std::function<void()>> work;
  for (auto& g : groups) {
    work.push_back([&, gp = &g]() {
      std::vector<TaskSpec> tasks;
      for (const auto& t : gp->members) tasks.push_back(suite.task(t));
      const EncoderSpec spec{mode_of(suite), cfg.channels, derive_seed(cfg.seed, "group/" + gp->id)};
      UniversalModel m(tasks, spec, cfg.adapter);
      RunConfig gcfg = cfg;
      gcfg.stage = Stage::groups;
      if (gcfg.anchor_task && std::find(gp->members.begin(), gp->members.end(), *gcfg.anchor_task) == gp->members.end()) {
        gcfg.anchor_task.reset();
      }
      const fs::path dir = run_dir / "groups" / gp->id;
      train_model(suite, m, teacher_set(teachers), gcfg, dir);
      gp->checkpoint = dir / "model";
      save_model(gp->checkpoint, m, gp->id);
    });
  }
  run_jobs(work, cfg.jobs);

  std::map<std::string, SingleTaskModel> group_teachers;
  for (const auto& g : groups) {
    const UniversalModel gm = load_universal(g.checkpoint);
    for (const auto& t : g.members) group_teachers.emplace(t, extract_task_model(gm, t));
  }
  GroupedRun out;
  out.final_run = train_universal(suite, cfg, group_teachers, run_dir / "final");
  json plan = json::array();
  for (const auto& g : groups) plan.push_back({{"id", g.id}, {"members", g.members}});
  write_json(run_dir / "groups.json", plan);
  out.groups = std::move(groups);
  return out;
}

}  // namespace unirep
