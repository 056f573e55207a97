#include "unirep/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "unirep/errors.hpp"

namespace unirep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_artifact(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw DependencyError("missing " + p.string() + "; run '" + stage + "' first");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  return json::parse(in);
}

void write_json_file(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::vector<std::string> task_ids_of(const DatasetSuite& suite) {
  std::vector<std::string> ids;
  for (const auto& t : suite.tasks) ids.push_back(t.id);
  return ids;
}

const char* kUniversalDir = "universal";
const char* kVanillaDir = "vanilla";
const char* kGroupsDir = "groups";

}  // namespace

void write_config_snapshot(const ExperimentConfig& cfg) {
  json doc = cfg.document;
  doc["out_dir"] = cfg.out_dir.generic_string();
  write_json_file(cfg.out_dir / "config.json", doc);
}

DatasetSuite generate_suite(const SuiteConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "dense") return generate_dense_suite(derive_seed(seed, "suite"), cfg.n_images, cfg.image_size);
  DomainSuiteOptions o;
  o.image_size = cfg.image_size;
  o.meta_classes_per_domain = cfg.meta_classes_per_domain;
  return generate_domain_suite(derive_seed(seed, "suite"), cfg.n_domains, cfg.n_classes, cfg.n_per_class, o);
}

DatasetSuite load_suite_artifact(const fs::path& out_dir) {
  require_artifact(out_dir / "suite" / "manifest.json", "gen-data");
  return import_suite(out_dir / "suite");
}

RunConfig run_config_for(const ExperimentConfig& cfg, const DatasetSuite& suite, Stage stage) {
  RunConfig r = cfg.run;
  r.stage = stage;
  r.out_dir = cfg.out_dir;
  r.distill = resolve_distillation(cfg.distill, suite, r.anchor_task);
  if (stage == Stage::teachers) r.epochs = cfg.teacher_epochs;
  return r;
}

Matrix split_features(const Encoder& enc, const DatasetSuite& suite, Split split, int batch_size) {
  const auto& samples = suite.split(split);
  if (samples.empty()) throw IterationError("split '" + to_string(split) + "' is empty");
  Matrix out;
  for (std::size_t s = 0; s < samples.size(); s += static_cast<std::size_t>(batch_size)) {
    std::vector<int> rows;
    for (std::size_t i = s; i < std::min(samples.size(), s + static_cast<std::size_t>(batch_size)); ++i) rows.push_back(static_cast<int>(i));
    Tensor f = enc.forward(stack_images(samples, rows));
    const int b = f.dim(0), c = f.dim(1);
    std::vector<double> pooled(static_cast<std::size_t>(b) * c, 0.0);
    const std::size_t plane = f.size() / (static_cast<std::size_t>(b) * c);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      double acc = 0.0;
      for (std::size_t p = 0; p < plane; ++p) acc += f[i * plane + p];
      pooled[i] = acc / static_cast<double>(plane);
    }
    if (out.rows == 0) out = Matrix(0, c);
    out.data.insert(out.data.end(), pooled.begin(), pooled.end());
    out.rows += b;
  }
  return out;
}

// --- commands --------------------------------------------------------------------

void cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = generate_suite(cfg.suite, cfg.seed);
  export_suite(suite, cfg.out_dir / "suite");
  out << "suite: " << (suite.mode == SuiteMode::mtl ? "mtl" : "mdl") << ", " << suite.tasks.size() << " tasks";
  for (Split s : {Split::train, Split::val, Split::test, Split::meta_test})
    if (!suite.split(s).empty()) out << ", " << to_string(s) << "=" << suite.split(s).size();
  out << "\ncontent hash: " << std::hex << std::setw(16) << std::setfill('0') << suite.content_hash() << std::dec << '\n';
}

void cmd_train_teachers(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  const RunConfig rc = run_config_for(cfg, suite, Stage::teachers);
  const auto records = train_teachers(suite, rc);
  for (const auto& [id, r] : records) {
    out << "teacher " << id << ": val " << to_string(suite.task(id).metric) << " = " << r.val_metrics.at(id)
        << ", checksum " << std::hex << std::setw(16) << std::setfill('0') << r.checksum << std::dec << std::setfill(' ') << '\n';
  }
}

void cmd_train_universal(const ExperimentConfig& cfg, bool vanilla, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  RunConfig rc = run_config_for(cfg, suite, Stage::universal);
  if (vanilla) rc.distill = without_distillation(rc.distill);
  const auto teachers = vanilla ? std::map<std::string, SingleTaskModel>{} : load_teachers(cfg.out_dir, task_ids_of(suite));
  const fs::path dir = cfg.out_dir / (vanilla ? kVanillaDir : kUniversalDir);
  const UniversalRun run = train_universal(suite, rc, teachers, dir);
  out << (vanilla ? "vanilla" : "universal") << ": " << run.train.iterations << " iterations, best epoch "
      << run.train.best_epoch << '\n';
  for (const auto& [t, v] : run.train.val_metrics) out << "  val " << t << " = " << v << '\n';
}

void cmd_train_groups(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  const RunConfig rc = run_config_for(cfg, suite, Stage::groups);
  const auto teachers = load_teachers(cfg.out_dir, task_ids_of(suite));
  auto groups = plan_groups(task_ids_of(suite), cfg.n_groups, derive_seed(cfg.seed, "plan"), cfg.group_anchor);
  const GroupedRun run = train_grouped(suite, rc, teachers, groups, cfg.out_dir / kGroupsDir);
  for (const auto& g : run.groups) {
    out << g.id << ":";
    for (const auto& m : g.members) out << ' ' << m;
    out << '\n';
  }
  out << "grouped universal: best epoch " << run.final_run.train.best_epoch << '\n';
}

ResultsTable evaluate_mtl(const ExperimentConfig& cfg, const DatasetSuite& suite) {
  const auto ids = task_ids_of(suite);
  const auto teachers = load_teachers(cfg.out_dir, ids);
  ResultsTable table;
  table.title = suite.mode == SuiteMode::mtl ? "Test results (dense multi-task suite)" : "Test results (multi-domain suite)";
  table.delta_name = suite.mode == SuiteMode::mtl ? "dMTL" : "dMDL";
  for (const auto& t : suite.tasks) table.columns.push_back({t.id, to_string(t.metric), t.lower_is_better});
  TableRow stl{"STL", {}, {}};
  for (const auto& id : ids) stl.values.push_back(evaluate_single(suite, teachers.at(id), Split::test, cfg.run.eval_batch_size));
  table.rows.push_back(stl);
  const std::vector<std::pair<std::string, fs::path>> candidates = {
      {"Uniform MTL", cfg.out_dir / kVanillaDir / "model"},
      {"Ours", cfg.out_dir / kUniversalDir / "model"},
      {"Ours (grouped)", cfg.out_dir / kGroupsDir / "final" / "model"}};
  bool any = false;
  for (const auto& [name, path] : candidates) {
    if (!fs::exists(path / "manifest.json")) continue;
    const UniversalModel m = load_universal(path);
    const auto metrics = evaluate_universal(suite, m, Split::test, cfg.run.eval_batch_size);
    TableRow row{name, {}, {}};
    for (const auto& id : ids) row.values.push_back(metrics.at(id));
    table.rows.push_back(row);
    any = true;
  }
  if (!any) throw DependencyError("no trained universal model in " + cfg.out_dir.string() + "; run 'train-universal' first");
  table.compute_deltas("STL");
  return table;
}

void cmd_eval_mtl(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  const ResultsTable table = evaluate_mtl(cfg, suite);
  const fs::path dir = cfg.out_dir / "eval";
  write_json_file(dir / "mtl_results.json", table_to_json(table));
  write_text(dir / "mtl_results.csv", format_csv(table));
  write_text(dir / "mtl_results.txt", format_text_table(table));
  out << format_text_table(table);
}

void cmd_eval_fewshot(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  if (suite.mode != SuiteMode::mdl) throw ConfigError("eval-fewshot needs a multi-domain suite (suite.kind = domains)");
  std::ostringstream csv;
  csv << "model,domain,seen,adapted,ways,shots,episodes,mean_accuracy,ci95\n";
  csv << std::setprecision(8);
  bool any = false;
  for (const auto& [name, dir] : {std::pair<std::string, std::string>{"universal", kUniversalDir},
                                  std::pair<std::string, std::string>{"vanilla", kVanillaDir}}) {
    const fs::path path = cfg.out_dir / dir / "model";
    if (!fs::exists(path / "manifest.json")) continue;
    any = true;
    const UniversalModel m = load_universal(path);
    const Matrix feats = split_features(m.encoder, suite, cfg.fewshot.episode.split, cfg.run.eval_batch_size);
    for (std::size_t d = 0; d < suite.domains.size(); ++d) {
      if (suite.domains[d].n_meta_classes == 0) continue;
      for (bool adapt : {false, true}) {
        if (adapt && !cfg.fewshot.adapt) continue;
        FewShotOptions fo = cfg.fewshot;
        fo.adapt = adapt;
        const EpisodeEvaluation ev = evaluate_episodes(suite, static_cast<int>(d), feats, fo);
        csv << name << ',' << ev.name << ',' << (ev.seen ? "seen" : "unseen") << ',' << (adapt ? 1 : 0) << ','
            << (fo.episode.varying_ways ? std::string("varying") : std::to_string(fo.episode.ways)) << ','
            << fo.episode.shots << ',' << fo.episodes << ',' << ev.mean << ',' << ev.ci95 << '\n';
        out << name << ' ' << ev.name << (adapt ? " (adapted)" : "") << ": " << std::fixed << std::setprecision(2)
            << 100.0 * ev.mean << "% +- " << 100.0 * ev.ci95 << '\n' << std::defaultfloat;
      }
    }
  }
  if (!any) throw DependencyError("no trained universal model; run 'train-universal' first");
  write_text(cfg.out_dir / "eval" / "fewshot.csv", csv.str());
}

void cmd_eval_retrieval(const ExperimentConfig& cfg, std::ostream& out) {
  write_config_snapshot(cfg);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  if (suite.mode != SuiteMode::mdl) throw ConfigError("eval-retrieval needs a multi-domain suite (suite.kind = domains)");
  const fs::path path = cfg.out_dir / kUniversalDir / "model";
  require_artifact(path / "manifest.json", "train-universal");
  const UniversalModel m = load_universal(path);
  std::ostringstream csv;
  csv << "split,k,recall\n" << std::setprecision(8);
  for (Split sp : {Split::test, Split::meta_test}) {
    const auto& samples = suite.split(sp);
    if (samples.empty()) continue;
    const Matrix feats = split_features(m.encoder, suite, sp, cfg.run.eval_batch_size);
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.class_label);
    const auto rec = recall_at_k(feats, labels, cfg.retrieval_ks);
    for (const auto& [k, v] : rec) {
      csv << to_string(sp) << ',' << k << ',' << v << '\n';
      out << to_string(sp) << " recall@" << k << " = " << v << '\n';
    }
  }
  write_text(cfg.out_dir / "eval" / "retrieval.csv", csv.str());
}

namespace {

/// Per-term loss curves of one run directory, averaged per epoch chunk.
std::vector<Series> loss_series(const fs::path& log_path, std::size_t max_points = 400) {
  std::map<std::string, std::vector<std::pair<double, double>>> raw;
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (!j.contains("iteration") || j.contains("split")) continue;
    const std::string term = j.at("term").get<std::string>();
    if (term == "balancer_weight") continue;
    const std::string key = j.at("task").get<std::string>() == "*" ? term : j.at("task").get<std::string>() + "/" + term;
    raw[key].emplace_back(j.at("iteration").get<double>(), j.at("value").get<double>());
  }
  std::vector<Series> out;
  for (auto& [name, pts] : raw) {
    Series s{name, {}};
    const std::size_t stride = std::max<std::size_t>(1, pts.size() / max_points);
    for (std::size_t i = 0; i < pts.size(); i += stride) {
      double x = 0, y = 0;
      const std::size_t end = std::min(pts.size(), i + stride);
      for (std::size_t k = i; k < end; ++k) {
        x += pts[k].first;
        y += pts[k].second;
      }
      s.points.emplace_back(x / static_cast<double>(end - i), y / static_cast<double>(end - i));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void render_table(const ResultsTable& t, const fs::path& dir, const std::string& stem, std::ostream& out) {
  out << format_text_table(t);
  write_text(dir / (stem + ".txt"), format_text_table(t));
  write_text(dir / (stem + ".csv"), format_csv(t));
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& r : t.rows)
    if (r.delta) bars.emplace_back(r.method, *r.delta);
  write_text(dir / (stem + "_delta.svg"), svg_bar_chart(bars, t.title.empty() ? t.delta_name : t.title, t.delta_name + " (%)"));
}

}  // namespace

void cmd_report(const ExperimentConfig& cfg, const std::optional<fs::path>& fixture, std::ostream& out) {
  const fs::path dir = cfg.out_dir / "report";
  if (fixture) {
    const ResultsTable t = table_from_json(read_json(*fixture));
    render_table(t, dir, fixture->stem().string(), out);
    return;
  }
  write_config_snapshot(cfg);
  const fs::path results = cfg.out_dir / "eval" / "mtl_results.json";
  require_artifact(results, "eval-mtl");
  json j = read_json(results);
  j["baseline"] = "STL";
  render_table(table_from_json(j), dir, "mtl_results", out);
  for (const char* run : {kUniversalDir, kVanillaDir}) {
    const fs::path log = cfg.out_dir / run / "metrics.jsonl";
    if (!fs::exists(log)) continue;
    write_text(dir / (std::string("loss_") + run + ".svg"),
               svg_line_plot(loss_series(log), std::string("Training loss terms (") + run + ")", "iteration", "loss", true));
  }
  const fs::path fewshot = cfg.out_dir / "eval" / "fewshot.csv";
  if (fs::exists(fewshot)) {
    std::ifstream in(fewshot);
    out << '\n' << in.rdbuf();
  }
  const fs::path retrieval = cfg.out_dir / "eval" / "retrieval.csv";
  if (fs::exists(retrieval)) {
    std::ifstream in(retrieval);
    out << '\n' << in.rdbuf();
  }
}

}  // namespace unirep
