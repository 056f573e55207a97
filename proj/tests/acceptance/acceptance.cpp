// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
// Usage: acceptance [criterion numbers...]; UNIREP_ACCEPT_DIR sets the
// scratch directory for the training criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "unirep/balancers.hpp"
#include "unirep/errors.hpp"
#include "unirep/fewshot.hpp"
#include "unirep/objective.hpp"
#include "unirep/pipeline.hpp"
#include "unirep/rng.hpp"

using namespace unirep;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "failed: " << what << "; ";
    pass = pass && ok;
  }
};

fs::path scratch_root() {
  const char* env = std::getenv("UNIREP_ACCEPT_DIR");
  return env && *env ? fs::path(env) : fs::temp_directory_path() / "unirep_acceptance";
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FeatureBatch random_batch(Rng& rng, int b, int c, int h, int w) {
  FeatureBatch f(b, c, h, w);
  for (double& v : f.data) v = rng.normal();
  return f;
}

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

int rand_in(Rng& rng, int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

ExperimentConfig config_file(const std::string& name, std::uint64_t seed, const fs::path& out) {
  ConfigOverrides o;
  o.seed = seed;
  o.out_dir = out;
  o.jobs = 1;
  return load_config(fs::path(UNIREP_SOURCE_DIR) / "configs" / name, o);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string dir_bytes(const fs::path& dir) {
  std::set<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + file_bytes(f);
  return all;
}

// --- 1 -----------------------------------------------------------------------

void delta_fixture(Outcome& o) {
  const json doc = json::parse(file_bytes(fs::path(UNIREP_SOURCE_DIR) / "tools" / "fixtures" / "table1_segnet.json"));
  ResultsTable t = table_from_json(doc);
  t.compute_deltas("STL");
  const double ours = *t.row("Ours").delta, uniform = *t.row("Uniform").delta;
  const std::vector<bool> lower{false, true, true};
  const double ours_oracle = oracle::delta_mtl(t.row("Ours").values, t.row("STL").values, lower);
  const double uniform_oracle = oracle::delta_mtl(t.row("Uniform").values, t.row("STL").values, lower);
  o.detail << "Ours " << format_signed(ours) << ", Uniform " << format_signed(uniform);
  o.require(std::abs(ours - 10.95) <= 0.02, "Ours within 0.02 of +10.95");
  o.require(std::abs(uniform + 1.13) <= 0.02, "Uniform within 0.02 of -1.13");
  o.require(std::abs(ours - ours_oracle) < 1e-12 && std::abs(uniform - uniform_oracle) < 1e-12, "independent recomputation");
}

// --- 2 -----------------------------------------------------------------------

void cka_properties(Outcome& o) {
  Rng rng(2002);
  double worst_self = 0, worst_sym = 0, worst_scale = 0, lo = 1, hi = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int b = rand_in(rng, 8, 32);
    const Matrix m = random_matrix(rng, b, rand_in(rng, 4, 64)), s = random_matrix(rng, b, rand_in(rng, 4, 64));
    worst_self = std::max(worst_self, std::abs(cka_rbf_similarity(m, m) - 1.0));
    const double ms = cka_rbf_similarity(m, s), sm = cka_rbf_similarity(s, m);
    worst_sym = std::max(worst_sym, std::abs(ms - sm));
    lo = std::min(lo, ms);
    hi = std::max(hi, ms);
    for (double alpha : {0.1, 3.0, 50.0}) {
      Matrix scaled = m;
      for (double& v : scaled.data) v *= alpha;
      worst_scale = std::max(worst_scale, std::abs(cka_rbf_similarity(m, scaled) - 1.0));
    }
  }
  double worst_oracle = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = random_matrix(rng, 3, rand_in(rng, 1, 8)), s = random_matrix(rng, 3, rand_in(rng, 1, 8));
    worst_oracle = std::max(worst_oracle, std::abs(cka_rbf_similarity(m, s) - oracle::cka(to_rows(m), to_rows(s))));
  }
  o.detail << std::scientific << std::setprecision(1) << "self " << worst_self << ", sym " << worst_sym << ", scale "
           << worst_scale << ", B=3 oracle " << worst_oracle << std::defaultfloat << ", range [" << lo << ", " << hi << "]";
  o.require(worst_self <= 1e-6, "self-similarity");
  o.require(worst_sym <= 1e-9, "symmetry");
  o.require(lo >= 0.0 && hi <= 1.0 + 1e-9, "range");
  o.require(worst_scale <= 1e-6, "scale invariance");
  o.require(worst_oracle <= 1e-9, "B=3 oracle");
}

// --- 3 -----------------------------------------------------------------------

void feature_loss_oracles(Outcome& o) {
  const double hand = norm_l2_feature_loss(FeatureBatch({3, 4}, 1, 2), FeatureBatch({1, 0}, 1, 2)).value;
  o.require(std::abs(hand - 0.8) <= 1e-9, "norm_l2 (3,4)/(1,0) = 0.8");

  Rng rng(3003);
  double worst_scale = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureBatch m = random_batch(rng, 3, 5, 2, 3), s = random_batch(rng, 3, 5, 2, 3);
    const double base = norm_l2_feature_loss(m, s).value;
    for (double a : {0.01, 0.5, 7.0, 1e3}) {
      FeatureBatch ms = m, ss = s;
      for (double& v : ms.data) v *= a;
      for (double& v : ss.data) v *= 1.0 / a + 0.3;
      worst_scale = std::max(worst_scale, std::abs(norm_l2_feature_loss(ms, ss).value - base));
    }
  }
  o.require(worst_scale <= 1e-9, "norm_l2 positive-scale invariance");

  const FeatureBatch s = random_batch(rng, 2, 4, 3, 3);
  FeatureBatch perm = s;
  for (int n = 0; n < 2; ++n)
    for (std::size_t p = 0; p < s.plane(); ++p) {
      perm.at(n, 0, p) = s.at(n, 3, p);
      perm.at(n, 1, p) = s.at(n, 0, p);
      perm.at(n, 2, p) = s.at(n, 1, p);
      perm.at(n, 3, p) = s.at(n, 2, p);
    }
  const double at_perm = attention_transfer_loss(perm, s).value;
  o.require(std::abs(at_perm) <= 1e-12, "AT blind to channel permutation");
  o.require(norm_l2_feature_loss(perm, s).value > 1e-3, "norm_l2 sees the permutation");

  const double orth = cosine_feature_loss(FeatureBatch({1, 0, 0}, 1, 3), FeatureBatch({0, 2, 0}, 1, 3)).value;
  o.require(std::abs(orth - 1.0) <= 1e-12, "cosine of orthogonal vectors = 1");
  o.detail << "norm_l2 hand " << hand << ", scale drift " << worst_scale << ", AT(perm) " << at_perm << ", cosine(orth) " << orth;
}

// --- 4 -----------------------------------------------------------------------

void gradient_checks(Outcome& o) {
  constexpr int kInstances = 25;
  constexpr double kH = 1e-5;
  Rng rng(4004);
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, const oracle::Vec& analytic, const oracle::Vec& numeric) {
    worst[name] = std::max(worst[name], oracle::relative_error(analytic, numeric));
  };
  using Loss = GradResult (*)(const FeatureBatch&, const FeatureBatch&);
  const std::vector<std::pair<std::string, Loss>> batch_losses = {{"norm_l2", norm_l2_feature_loss},
                                                                  {"cosine", cosine_feature_loss},
                                                                  {"AT", attention_transfer_loss},
                                                                  {"KL", kl_divergence}};
  for (int i = 0; i < kInstances; ++i) {
    const int b = rand_in(rng, 1, 4), c = rand_in(rng, 2, 6), h = rand_in(rng, 1, 3), w = rand_in(rng, 1, 3);
    const FeatureBatch m = random_batch(rng, b, c, h, w), s = random_batch(rng, b, c, h, w);
    for (const auto& [name, loss] : batch_losses) {
      auto f = [&](const oracle::Vec& x) { return loss(FeatureBatch(x, b, c, h, w), s).value; };
      record(name, loss(m, s).grad, oracle::central_difference(f, m.data, kH));
    }

    const int rows = rand_in(rng, 3, 10), cols = rand_in(rng, 2, 6);
    const Matrix cm = random_matrix(rng, rows, cols), cs = random_matrix(rng, rows, rand_in(rng, 2, 6));
    auto fc = [&](const oracle::Vec& x) { return cka_loss(Matrix(rows, cols, x), cs).value; };
    record("cka_loss", cka_loss(cm, cs).grad, oracle::central_difference(fc, cm.data, kH));

    const int ways = rand_in(rng, 2, 5), shots = rand_in(rng, 1, 4), dim = rand_in(rng, 2, 6);
    const Matrix support = random_matrix(rng, ways * shots, dim);
    std::vector<int> labels;
    for (int r = 0; r < ways * shots; ++r) labels.push_back(r % ways);
    Matrix map = identity_matrix(dim);
    for (double& v : map.data) v += 0.2 * rng.normal();
    const double tau = 0.5 + 5.0 * rng.uniform();
    auto fm = [&](const oracle::Vec& x) { return ncc_support_loss(support, labels, Matrix(dim, dim, x), tau).value; };
    record("NCC cross-entropy (map)", ncc_support_loss(support, labels, map, tau).grad,
           oracle::central_difference(fm, map.data, kH));
    auto ff = [&](const oracle::Vec& x) { return ncc_support_loss_features(Matrix(ways * shots, dim, x), labels, tau).value; };
    record("NCC cross-entropy (features)", ncc_support_loss_features(support, labels, tau).grad,
           oracle::central_difference(ff, support.data, kH));
  }
  o.detail << kInstances << " instances each, worst relative error:" << std::scientific << std::setprecision(1);
  for (const auto& [name, e] : worst) {
    o.detail << ' ' << name << ' ' << e << ';';
    o.require(e <= 1e-4, name);
  }
}

// --- 5 -----------------------------------------------------------------------

/// Task losses written out elementwise: cross-entropy, L1 and cosine distance.
double independent_task_loss(const TaskSpec& task, const Tensor& pred, const std::vector<const Label*>& labels) {
  const int rows = pred.dim(0), ch = pred.dim(1);
  const std::size_t plane = pred.rank() == 4 ? static_cast<std::size_t>(pred.dim(2)) * pred.dim(3) : 1;
  auto v = [&](int n, int c, std::size_t p) { return static_cast<double>(pred[(static_cast<std::size_t>(n) * ch + c) * plane + p]); };
  double sum = 0;
  for (int n = 0; n < rows; ++n) {
    const Label& y = *labels[static_cast<std::size_t>(n)];
    for (std::size_t p = 0; p < plane; ++p) {
      if (task.loss == TaskLoss::cross_entropy) {
        double z = 0;
        for (int c = 0; c < ch; ++c) z += std::exp(v(n, c, p));
        sum += std::log(z) - v(n, y.ints[p], p);
      } else if (task.loss == TaskLoss::l1) {
        for (int c = 0; c < ch; ++c) sum += std::abs(v(n, c, p) - y.floats[static_cast<std::size_t>(c) * plane + p]);
      } else {
        double pp = 0, tt = 0, pt = 0;
        for (int c = 0; c < ch; ++c) {
          const double t = y.floats[static_cast<std::size_t>(c) * plane + p];
          pp += v(n, c, p) * v(n, c, p);
          tt += t * t;
          pt += v(n, c, p) * t;
        }
        sum += 1.0 - pt / (std::max(std::sqrt(pp), 1e-12) * std::max(std::sqrt(tt), 1e-12));
      }
    }
  }
  const double per_row = task.loss == TaskLoss::l1 ? static_cast<double>(ch) * plane : static_cast<double>(plane);
  return sum / (rows * per_row);
}

void objective_reduction(Outcome& o) {
  const DatasetSuite suite = generate_dense_suite(505, 24, 16);
  std::map<std::string, SingleTaskModel> teacher_models;
  TeacherSet teachers;
  std::uint64_t k = 50;
  for (const auto& t : suite.tasks) teacher_models.emplace(t.id, SingleTaskModel(t, EncoderSpec{EncoderMode::dense, 8, ++k}));
  for (auto& [id, m] : teacher_models) {
    freeze_and_checksum(m);
    teachers[id] = &m;
  }
  double worst_vanilla = 0, worst_fixed = 0;
  Rng rng(5005);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> rows;
    for (int i = 0; i < 6; ++i) rows.push_back(static_cast<int>(rng.below(suite.split(Split::train).size())));
    const Batch batch = make_batch(suite, Split::train, rows);
    UniversalModel student(suite.tasks, EncoderSpec{EncoderMode::dense, 8, 900 + static_cast<std::uint64_t>(trial)},
                           AdapterKind::linear);

    DistillationConfig cfg = without_distillation(dense_preset());
    for (auto& [id, w] : cfg.weights) w.task = 0.25 + 2.0 * rng.uniform();
    const double total = total_objective(batch, student, teachers, cfg, 0).total;
    const UniversalOutput out = forward_universal(student, batch.images, false);
    double expected = 0;
    for (const auto& t : suite.tasks)
      expected += cfg.lambda_task(t.id) * independent_task_loss(t, out.predictions.at(t.id), batch.labels.at(t.id));
    worst_vanilla = std::max(worst_vanilla, std::abs(total - expected));

    // student encoder copies one teacher, which then serves every task
    const SingleTaskModel& src = teacher_models.at(suite.tasks[static_cast<std::size_t>(trial) % 3].id);
    auto sp = student.encoder.params();
    auto tp = src.encoder.params();
    for (std::size_t i = 0; i < sp.size(); ++i) sp[i].param->value = tp[i].param->value;
    TeacherSet same;
    for (const auto& t : suite.tasks) same[t.id] = &src;
    DistillationConfig fixed = dense_preset();
    for (auto& [id, w] : fixed.weights) w.task = 0.0;
    worst_fixed = std::max(worst_fixed, std::abs(total_objective(batch, student, same, fixed, 0).total));
  }
  o.detail << std::scientific << std::setprecision(1) << "vanilla vs independent " << worst_vanilla
           << ", fixed point total " << worst_fixed;
  o.require(worst_vanilla <= 1e-9, "vanilla reduction");
  o.require(worst_fixed <= 1e-6, "perfect-distillation fixed point");
}

// --- 6 -----------------------------------------------------------------------

void directional_claim(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> ours, vanilla;
  o.detail << std::fixed << std::setprecision(2);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ExperimentConfig cfg = config_file("dense_toy.json", seed, fresh_dir("c6_seed" + std::to_string(seed)));
    std::ostringstream log;
    cmd_gen_data(cfg, log);
    cmd_train_teachers(cfg, log);
    cmd_train_universal(cfg, true, log);
    cmd_train_universal(cfg, false, log);
    const ResultsTable t = evaluate_mtl(cfg, load_suite_artifact(cfg.out_dir));
    ours.push_back(*t.row("Ours").delta);
    vanilla.push_back(*t.row("Uniform MTL").delta);
    o.detail << "seed " << seed << ": " << ours.back() << " vs " << vanilla.back() << "; ";
    std::cerr << "  [6] seed " << seed << " distilled " << ours.back() << " vanilla " << vanilla.back() << " ("
              << seconds_since(t0) << " s)\n";
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mo = median(ours), mv = median(vanilla), secs = seconds_since(t0);
  o.detail << "median " << mo << " vs " << mv << ", " << secs / 60.0 << " min";
  o.require(mo > mv, "median distilled dMTL > median vanilla dMTL");
  o.require(secs <= 20 * 60, "runtime <= 20 min");
}

// --- 7 -----------------------------------------------------------------------

void grouping_parity(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = config_file("dense_toy.json", 1, fresh_dir("c7"));
  std::ostringstream log;
  cmd_gen_data(cfg, log);
  cmd_train_teachers(cfg, log);
  cmd_train_universal(cfg, false, log);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  const ResultsTable direct = evaluate_mtl(cfg, suite);
  const double d0 = *direct.row("Ours").delta;
  o.detail << std::fixed << std::setprecision(2) << "direct " << d0 << ";";

  std::vector<std::string> ids;
  for (const auto& t : suite.tasks) ids.push_back(t.id);
  const auto teachers = load_teachers(cfg.out_dir, ids);
  const RunConfig rc = run_config_for(cfg, suite, Stage::groups);
  // three distinct random partitions
  std::set<std::set<std::string>> seen;
  std::vector<std::vector<TaskGroup>> plans;
  for (std::uint64_t s = derive_seed(cfg.seed, "plan"); plans.size() < 3; ++s) {
    auto g = plan_groups(ids, 2, s);
    std::set<std::string> key;
    for (const auto& grp : g) {
      std::string k;
      for (const auto& m : std::set<std::string>(grp.members.begin(), grp.members.end())) k += m + "+";
      key.insert(k);
    }
    if (seen.insert(key).second) plans.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const GroupedRun run = train_grouped(suite, rc, teachers, plans[i], cfg.out_dir / ("plan" + std::to_string(i)));
    const UniversalModel m = load_universal(run.final_run.model_checkpoint);
    const auto metrics = evaluate_universal(suite, m, Split::test, cfg.run.eval_batch_size);
    ResultsTable t = direct;
    t.rows.resize(1);
    TableRow row{"grouped", {}, {}};
    for (const auto& id : ids) row.values.push_back(metrics.at(id));
    t.rows.push_back(row);
    t.compute_deltas("STL");
    const double d = *t.rows.back().delta;
    o.detail << " {";
    for (const auto& g : run.groups) {
      o.detail << '(';
      for (std::size_t j = 0; j < g.members.size(); ++j) o.detail << (j ? " " : "") << g.members[j];
      o.detail << ')';
    }
    o.detail << "} " << d << ';';
    std::cerr << "  [7] plan " << i << " dMTL " << d << " (direct " << d0 << ", " << seconds_since(t0) << " s)\n";
    o.require(std::abs(d - d0) <= 2.0, "plan " + std::to_string(i) + " within 2 points");
  }
  const double secs = seconds_since(t0);
  o.detail << ' ' << secs / 60.0 << " min";
  o.require(secs <= 30 * 60, "runtime <= 30 min");
}

// --- 8 -----------------------------------------------------------------------

void fewshot_sanity(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig cfg = config_file("domains_toy.json", 1, fresh_dir("c8"));
  std::ostringstream log;
  cmd_gen_data(cfg, log);
  cmd_train_teachers(cfg, log);
  cmd_train_universal(cfg, false, log);
  const DatasetSuite suite = load_suite_artifact(cfg.out_dir);
  const UniversalModel model = load_universal(cfg.out_dir / "universal" / "model");
  const Matrix feats = split_features(model.encoder, suite, Split::meta_test, cfg.run.eval_batch_size);
  const int withheld = suite.withheld_domain();

  FewShotOptions fo;
  fo.episode.ways = 5;
  fo.episode.shots = 5;
  fo.episode.query_per_class = cfg.fewshot.episode.query_per_class;
  fo.episodes = 100;
  fo.seed = derive_seed(cfg.seed, "acceptance/fewshot");
  fo.adapt_options = AdaptOptions{40, 0.1, MapOptimizer::adadelta, cfg.fewshot.adapt_options.temperature};
  fo.adapt = false;
  const EpisodeEvaluation plain = evaluate_episodes(suite, withheld, feats, fo);
  fo.adapt = true;
  const EpisodeEvaluation adapted = evaluate_episodes(suite, withheld, feats, fo);

  // step-0 map is the identity, so predictions are NCC on the raw features
  bool bitwise = true;
  Rng rng(fo.seed);
  for (int e = 0; e < 20; ++e) {
    const Episode ep = sample_episode(suite, withheld, fo.episode, rng);
    Matrix support(static_cast<int>(ep.support.size()), feats.cols), query(static_cast<int>(ep.query.size()), feats.cols);
    for (int i = 0; i < support.rows; ++i)
      for (int j = 0; j < feats.cols; ++j) support(i, j) = feats(ep.support[static_cast<std::size_t>(i)], j);
    for (int i = 0; i < query.rows; ++i)
      for (int j = 0; j < feats.cols; ++j) query(i, j) = feats(ep.query[static_cast<std::size_t>(i)], j);
    AdaptOptions zero = fo.adapt_options;
    zero.steps = 0;
    const FewShotAdapter a0 = adapt_linear_map(support, ep.support_labels, zero);
    const Matrix p0 = ncc_predict(apply_map(support, a0.map), ep.support_labels, apply_map(query, a0.map), zero.temperature);
    const Matrix pu = ncc_predict(support, ep.support_labels, query, zero.temperature);
    bitwise = bitwise && p0.data == pu.data;
  }
  const double secs = seconds_since(t0);
  o.detail << std::fixed << std::setprecision(2) << "withheld domain '" << plain.name << "': NCC " << 100 * plain.mean
           << "% +- " << 100 * plain.ci95 << ", adapted " << 100 * adapted.mean << "%, step-0 bitwise "
           << (bitwise ? "yes" : "no") << ", " << secs / 60.0 << " min";
  o.require(plain.accuracies.size() == 100, "100 episodes");
  o.require(plain.mean > 0.40, "NCC accuracy > 40%");
  o.require(adapted.mean >= plain.mean - 0.01, "adaptation loses at most 1 point");
  o.require(bitwise, "step-0 predictions bitwise equal");
  o.require(secs <= 5 * 60, "runtime <= 5 min");
}

// --- 9 -----------------------------------------------------------------------

void retrieval_oracle(Outcome& o) {
  Rng rng(9009);
  const std::vector<int> ks{1, 2, 3, 5, 10, 20, 50, 99};
  bool exact = true;
  for (int trial = 0; trial < 5; ++trial) {
    Matrix f = random_matrix(rng, 100, 8);
    // coarse quantization produces exact cosine ties
    if (trial % 2) for (double& v : f.data) v = std::round(v);
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(static_cast<int>(rng.below(12)));
    const auto r = recall_at_k(f, labels, ks);
    for (int k : ks) exact = exact && r.at(k) == oracle::recall_at_k(to_rows(f), labels, k);
  }
  bool monotone = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rand_in(rng, 10, 60);
    const Matrix f = random_matrix(rng, n, rand_in(rng, 2, 10));
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(rand_in(rng, 2, 8)))));
    std::vector<int> kk;
    for (int k = 1; k < n; ++k) kk.push_back(k);
    const auto r = recall_at_k(f, labels, kk);
    for (int k = 2; k < n; ++k) monotone = monotone && r.at(k) >= r.at(k - 1);
  }
  o.detail << "exact on 5 x 100 items: " << (exact ? "yes" : "no") << ", monotone on 50 instances: " << (monotone ? "yes" : "no");
  o.require(exact, "exhaustive oracle");
  o.require(monotone, "monotone in k");
}

// --- 10 ----------------------------------------------------------------------

void integrity_determinism(Outcome& o) {
  const fs::path out = fresh_dir("c10");
  const DatasetSuite suite = generate_dense_suite(1010, 48, 16);
  RunConfig c;
  c.channels = 8;
  c.epochs = 3;
  c.batch_size = 8;
  c.seed = 10;
  c.out_dir = out;
  c.distill = dense_preset();
  c.eval_batch_size = 16;
  c.jobs = 1;
  RunConfig tc = c;
  tc.stage = Stage::teachers;
  tc.epochs = 2;
  const auto records = train_teachers(suite, tc);
  const auto teachers = load_teachers(out, {"seg", "depth", "normals"});

  const UniversalRun a = train_universal(suite, c, teachers, out / "a");
  const UniversalRun b = train_universal(suite, c, teachers, out / "b");
  bool stored = true;
  for (const auto& [id, rec] : records) stored = stored && checksum(teachers.at(id)) == rec.checksum;
  o.require(a.teacher_checksums_before == a.teacher_checksums_after && stored, "teacher checksums invariant");
  const bool same_model = dir_bytes(out / "a" / "model") == dir_bytes(out / "b" / "model");
  bool same_ckpt = true;
  for (const auto& e : fs::directory_iterator(out / "a" / "checkpoints")) {
    if (!e.is_directory()) continue;
    same_ckpt = same_ckpt && dir_bytes(e.path()) == dir_bytes(out / "b" / "checkpoints" / e.path().filename());
  }
  o.require(same_model && same_ckpt, "byte-identical checkpoints");

  RunConfig first = c;
  first.stop_after_iteration = static_cast<long>(a.train.loss_trace.size()) / 2 + 3;
  const UniversalRun part = train_universal(suite, first, teachers, out / "r");
  RunConfig second = c;
  second.resume = true;
  const UniversalRun rest = train_universal(suite, second, teachers, out / "r");
  std::map<long, double> full(a.train.loss_trace.begin(), a.train.loss_trace.end());
  double worst = 0;
  bool covered = part.train.interrupted && !rest.train.loss_trace.empty();
  for (const auto& [it, v] : part.train.loss_trace) worst = std::max(worst, std::abs(full.at(it) - v));
  for (const auto& [it, v] : rest.train.loss_trace) worst = std::max(worst, std::abs(full.at(it) - v));
  covered = covered && rest.train.loss_trace.back().first == a.train.loss_trace.back().first;
  o.require(covered && worst <= 1e-6, "resume matches the uninterrupted trace");
  o.detail << "checksums " << (a.teacher_checksums_before == a.teacher_checksums_after ? "unchanged" : "changed")
           << ", reruns " << (same_model && same_ckpt ? "byte-identical" : "differ") << ", resume max diff " << worst
           << " over " << a.train.loss_trace.size() << " iterations";
}

// --- 11 ----------------------------------------------------------------------

void balancer_contracts(Outcome& o) {
  const std::vector<std::string> ids{"a", "b", "c"};
  const std::map<std::string, double> losses{{"a", 0.3}, {"b", 2.0}, {"c", 7.5}};
  Balancer uniform(BalancerKind::uniform, ids);
  bool ones = true;
  for (const auto& [id, w] : uniform.task_weights(losses, 0)) ones = ones && w == 1.0;
  o.require(ones, "uniform weights = 1");

  Balancer unc(BalancerKind::uncertainty, ids);
  bool init = true;
  for (const auto& [id, w] : unc.task_weights(losses, 0)) init = init && w == 1.0;
  const std::vector<double> s{-0.7, 0.2, 1.9};
  auto params = unc.params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value[0] = static_cast<float>(s[i]);
  double worst_exp = 0;
  const auto w = unc.task_weights(losses, 0);
  for (std::size_t i = 0; i < ids.size(); ++i)
    worst_exp = std::max(worst_exp, std::abs(w.at(ids[i]) - std::exp(-static_cast<double>(static_cast<float>(s[i])))));
  o.require(init && worst_exp <= 1e-12, "uncertainty weights = exp(-s), 1 at s = 0");

  Rng rng(1111);
  double worst_pair = 0, worst_brute = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int t = rand_in(rng, 2, 5), n = rand_in(rng, 2, 12);
    std::vector<std::vector<double>> g(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& v : g)
      for (double& x : v) x = rng.normal();
    if (trial % 2) {  // force a conflict
      for (std::size_t k = 0; k < g[1].size(); ++k) g[1][k] = -0.8 * g[0][k] + 0.3 * g[1][k];
    }
    const SurgeryResult r = pcgrad_detailed(g, rng);
    const oracle::Mat brute = oracle::pcgrad(g, r.order);
    for (int i = 0; i < t; ++i) {
      const auto& p = r.projected[static_cast<std::size_t>(i)];
      for (std::size_t k = 0; k < p.size(); ++k) worst_brute = std::max(worst_brute, std::abs(p[k] - brute[static_cast<std::size_t>(i)][k]));
    }
    if (t == 2) {
      worst_pair = std::min({worst_pair, oracle::dot(brute[0], brute[1]), oracle::dot(brute[0], g[1]), oracle::dot(brute[1], g[0])});
      worst_pair = std::min({worst_pair, oracle::dot(r.projected[0], r.projected[1])});
    }
  }
  o.require(worst_pair >= -1e-9, "pairwise post-projection dot products >= -1e-9");
  o.require(worst_brute <= 1e-12, "PCGrad equals the brute-force recomputation");

  bool identity = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> g(static_cast<std::size_t>(rand_in(rng, 1, 10)));
    for (double& x : g) x = rng.normal();
    identity = identity && pcgrad({g}, rng) == g;
  }
  o.require(identity, "single-task PCGrad is the identity");
  o.detail << std::scientific << std::setprecision(1) << "uncertainty err " << worst_exp << ", min pairwise dot (T=2) "
           << worst_pair << ", max brute-force diff " << worst_brute;
}

// --- 12 ----------------------------------------------------------------------

void annealing(Outcome& o) {
  const AnnealSchedule s{4.0, 240000, true};
  const double a0 = anneal_weight(s, 0), ak = anneal_weight(s, 240000), ah = anneal_weight(s, 120000);
  o.detail << "lambda(0) = " << a0 << ", lambda(K/2) = " << ah << ", lambda(K) = " << ak;
  o.require(a0 == 4.0, "lambda(0) = 4");
  o.require(ak == 0.0, "lambda(K) = 0");
  o.require(ah == 2.0, "lambda(K/2) = 2");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"dMTL fixture oracle", delta_fixture},
      {"CKA properties", cka_properties},
      {"feature-loss oracles", feature_loss_oracles},
      {"gradient checks", gradient_checks},
      {"objective reduction", objective_reduction},
      {"distilled beats vanilla MTL (5 seeds)", directional_claim},
      {"grouping parity", grouping_parity},
      {"few-shot sanity", fewshot_sanity},
      {"retrieval oracle", retrieval_oracle},
      {"integrity and determinism", integrity_determinism},
      {"balancer contracts", balancer_contracts},
      {"annealing", annealing},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "usage: acceptance [1-" << criteria.size() << "]...\n";
      return 2;
    }
    selected.insert(n);
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.contains(n)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << n << "] " << criteria[i].first << " ("
              << std::fixed << std::setprecision(1) << seconds_since(t0) << " s): " << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
