#include "unirep/config.hpp"

#include <cstdlib>
#include <fstream>

#include "unirep/errors.hpp"

namespace unirep {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config_document() {
  return json::parse(R"({
    "seed": 0,
    "out_dir": "runs/default",
    "jobs": 1,
    "suite": {
      "kind": "dense",
      "n_images": 2000,
      "image_size": 32,
      "n_domains": 4,
      "n_classes": 10,
      "n_per_class": 30,
      "meta_classes_per_domain": 5
    },
    "model": {"channels": 16, "adapter": "linear"},
    "train": {
      "epochs": 12,
      "batch_size": 16,
      "eval_batch_size": 64,
      "flip_augment": false,
      "anchor_task": null,
      "anchor_share": 0.5,
      "optimizer": {"kind": "adam", "lr": 0.002, "weight_decay": 0.0, "schedule": "step_half"},
      "adapter_optimizer": {"kind": "adam", "lr": 0.01, "weight_decay": 0.0001, "schedule": "cosine"}
    },
    "teachers": {"epochs": null},
    "distill": {
      "preset": "auto",
      "feature_loss": null,
      "prediction_loss": null,
      "bandwidth_frac": 0.5,
      "domain_weight": 1.0,
      "anchor_weight": 4.0,
      "anneal_iterations": 0,
      "weights": {},
      "sweep": [0.1, 1, 10]
    },
    "balancer": "uniform",
    "groups": {"n_groups": 2, "anchor": null},
    "eval": {
      "fewshot": {
        "ways": 5, "shots": 5, "query_per_class": 10, "episodes": 100,
        "varying_ways": false, "min_ways": 2, "max_ways": 5,
        "adapt": true, "steps": 40, "lr": 0.1, "optimizer": "adadelta", "temperature": 1.0
      },
      "retrieval": {"ks": [1, 5, 10]}
    }
  })");
}

namespace {

const json& weight_entry_template() {
  static const json t = json::parse(R"({"task": 1.0, "feature": 0.0, "prediction": 0.0,
                                         "feature_anneal": 0, "prediction_anneal": 0})");
  return t;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return true;
  if (def.is_number()) return v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

void merge(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config key '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (path == "distill.weights") {
      if (!value.is_object()) throw ConfigError("config key '" + p + "' must be an object");
      json entry = weight_entry_template();
      merge(entry, value, p);
      base[key] = entry;
      continue;
    }
    if (!base.contains(key)) throw ConfigError("unknown config key '" + p + "'");
    json& slot = base[key];
    if (!same_kind(slot, value)) {
      throw ConfigError("config key '" + p + "' has the wrong type (expected " + std::string(slot.type_name()) + ")");
    }
    if (slot.is_object()) merge(slot, value, p);
    else slot = value;
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + "." + key + "' is invalid");
  }
}

OptimSettings optim_from(const json& j, const std::string& path) {
  OptimSettings o;
  o.kind = parse_optimizer_kind(get<std::string>(j, "kind", path));
  o.lr = get<double>(j, "lr", path);
  o.weight_decay = get<double>(j, "weight_decay", path);
  o.schedule = parse_lr_schedule(get<std::string>(j, "schedule", path));
  return o;
}

std::optional<std::string> opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

json materialize_config(const json& user) {
  json doc = default_config_document();
  merge(doc, user.is_null() ? json::object() : user, "");
  return doc;
}

ExperimentConfig config_from_document(const json& d) {
  ExperimentConfig c;
  c.document = d;
  if (!d.at("seed").is_number_integer() || d.at("seed").get<long long>() < 0) {
    throw ConfigError("config key 'seed' must be a non-negative integer");
  }
  c.seed = d.at("seed").get<std::uint64_t>();
  c.out_dir = d.at("out_dir").get<std::string>();

  const json& s = d.at("suite");
  c.suite.kind = get<std::string>(s, "kind", "suite");
  if (c.suite.kind != "dense" && c.suite.kind != "domains") throw ConfigError("config key 'suite.kind' must be dense or domains");
  c.suite.n_images = get<int>(s, "n_images", "suite");
  c.suite.image_size = get<int>(s, "image_size", "suite");
  c.suite.n_domains = get<int>(s, "n_domains", "suite");
  c.suite.n_classes = get<int>(s, "n_classes", "suite");
  c.suite.n_per_class = get<int>(s, "n_per_class", "suite");
  c.suite.meta_classes_per_domain = get<int>(s, "meta_classes_per_domain", "suite");

  RunConfig& r = c.run;
  r.seed = c.seed;
  r.channels = get<int>(d.at("model"), "channels", "model");
  r.adapter = parse_adapter_kind(get<std::string>(d.at("model"), "adapter", "model"));
  const json& t = d.at("train");
  r.epochs = get<int>(t, "epochs", "train");
  r.batch_size = get<int>(t, "batch_size", "train");
  r.eval_batch_size = get<int>(t, "eval_batch_size", "train");
  r.flip_augment = get<bool>(t, "flip_augment", "train");
  r.anchor_task = opt_string(t, "anchor_task");
  r.anchor_share = get<double>(t, "anchor_share", "train");
  r.main = optim_from(t.at("optimizer"), "train.optimizer");
  r.adapter_optim = optim_from(t.at("adapter_optimizer"), "train.adapter_optimizer");
  r.balancer = parse_balancer_kind(d.at("balancer").get<std::string>());
  r.jobs = d.at("jobs").get<int>();
  const json& te = d.at("teachers").at("epochs");
  c.teacher_epochs = te.is_null() ? r.epochs : te.get<int>();

  const json& di = d.at("distill");
  c.distill.preset = get<std::string>(di, "preset", "distill");
  c.distill.feature_loss = opt_string(di, "feature_loss");
  c.distill.prediction_loss = opt_string(di, "prediction_loss");
  c.distill.bandwidth_frac = get<double>(di, "bandwidth_frac", "distill");
  c.distill.domain_weight = get<double>(di, "domain_weight", "distill");
  c.distill.anchor_weight = get<double>(di, "anchor_weight", "distill");
  c.distill.anneal_iterations = get<long>(di, "anneal_iterations", "distill");
  c.distill.weights = di.at("weights");
  c.distill.sweep = get<std::vector<double>>(di, "sweep", "distill");
  if (c.distill.anneal_iterations < 0) throw ConfigError("config key 'distill.anneal_iterations' must be >= 0");

  c.n_groups = get<int>(d.at("groups"), "n_groups", "groups");
  c.group_anchor = opt_string(d.at("groups"), "anchor");

  const json& f = d.at("eval").at("fewshot");
  auto& fo = c.fewshot;
  fo.episode.ways = get<int>(f, "ways", "eval.fewshot");
  fo.episode.shots = get<int>(f, "shots", "eval.fewshot");
  fo.episode.query_per_class = get<int>(f, "query_per_class", "eval.fewshot");
  fo.episode.varying_ways = get<bool>(f, "varying_ways", "eval.fewshot");
  fo.episode.min_ways = get<int>(f, "min_ways", "eval.fewshot");
  fo.episode.max_ways = get<int>(f, "max_ways", "eval.fewshot");
  fo.episodes = get<int>(f, "episodes", "eval.fewshot");
  fo.adapt = get<bool>(f, "adapt", "eval.fewshot");
  fo.adapt_options.steps = get<int>(f, "steps", "eval.fewshot");
  fo.adapt_options.lr = get<double>(f, "lr", "eval.fewshot");
  fo.adapt_options.optimizer = parse_map_optimizer(get<std::string>(f, "optimizer", "eval.fewshot"));
  fo.adapt_options.temperature = get<double>(f, "temperature", "eval.fewshot");
  fo.seed = derive_seed(c.seed, "fewshot");
  if (fo.episodes < 1) throw ConfigError("config key 'eval.fewshot.episodes' must be >= 1");
  c.retrieval_ks = get<std::vector<int>>(d.at("eval").at("retrieval"), "ks", "eval.retrieval");
  return c;
}

ExperimentConfig load_config(const std::optional<fs::path>& path, const ConfigOverrides& overrides) {
  json user = json::object();
  if (path && !path->empty()) {
    std::ifstream in(*path);
    if (!in) throw IoError("cannot read config file " + path->string());
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + path->string() + " is not valid JSON: " + e.what());
    }
  }
  if (overrides.seed) user["seed"] = *overrides.seed;
  if (overrides.out_dir) user["out_dir"] = overrides.out_dir->string();
  if (overrides.jobs) user["jobs"] = *overrides.jobs;
  ExperimentConfig c = config_from_document(materialize_config(user));
  if (const char* root = std::getenv("UNIREP_OUT_ROOT"); root != nullptr && *root != '\0' && c.out_dir.is_relative()) {
    c.out_dir = fs::path(root) / c.out_dir;
  }
  c.run.out_dir = c.out_dir;
  return c;
}

DistillationConfig resolve_distillation(const DistillSettings& s, const DatasetSuite& suite,
                                        const std::optional<std::string>& anchor) {
  DistillationConfig cfg;
  std::string preset = s.preset;
  if (preset == "auto") preset = suite.mode == SuiteMode::mtl ? "dense" : "domains";
  if (preset == "dense") {
    cfg = dense_preset();
    for (auto it = cfg.weights.begin(); it != cfg.weights.end();) {
      it = suite.task_index(it->first) < 0 ? cfg.weights.erase(it) : std::next(it);
    }
    for (const auto& t : suite.tasks) cfg.weights.try_emplace(t.id, TaskWeights{1.0, {1.0, 1, false}, {0.0, 1, false}});
  } else if (preset == "domains") {
    cfg = domain_preset(suite.tasks, s.domain_weight, anchor.value_or(""), s.anchor_weight);
  } else if (preset == "none") {
    for (const auto& t : suite.tasks) cfg.weights[t.id] = TaskWeights{1.0, {0.0, 1, false}, {0.0, 1, false}};
  } else {
    throw ConfigError("config key 'distill.preset' must be auto, dense, domains or none");
  }
  if (s.feature_loss) cfg.feature_loss = parse_feature_loss(*s.feature_loss);
  if (s.prediction_loss) cfg.prediction_loss = parse_prediction_loss(*s.prediction_loss);
  cfg.bandwidth_frac = s.bandwidth_frac;
  for (const auto& [task, w] : s.weights.items()) {
    if (suite.task_index(task) < 0) throw ConfigError("config key 'distill.weights." + task + "' names an unknown task");
    TaskWeights tw;
    tw.task = w.at("task").get<double>();
    tw.feature.initial = w.at("feature").get<double>();
    tw.prediction.initial = w.at("prediction").get<double>();
    const long fk = w.at("feature_anneal").get<long>(), pk = w.at("prediction_anneal").get<long>();
    tw.feature.active = fk > 0;
    tw.feature.iterations = fk > 0 ? fk : 1;
    tw.prediction.active = pk > 0;
    tw.prediction.iterations = pk > 0 ? pk : 1;
    cfg.weights[task] = tw;
  }
  if (s.anneal_iterations > 0) {
    for (auto& [task, w] : cfg.weights) {
      if (!w.feature.active) w.feature = {w.feature.initial, s.anneal_iterations, true};
      if (!w.prediction.active) w.prediction = {w.prediction.initial, s.anneal_iterations, true};
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace unirep
