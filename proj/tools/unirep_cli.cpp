// unirep: config-driven pipeline runner.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <nlohmann/json.hpp>

#include "unirep/errors.hpp"
#include "unirep/pipeline.hpp"

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  int jobs = 0;
  bool vanilla = false;
  std::string fixture;
};

unirep::ExperimentConfig load(const Flags& f) {
  unirep::ConfigOverrides o;
  if (f.seed >= 0) o.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.out.empty()) o.out_dir = f.out;
  if (f.jobs > 0) o.jobs = f.jobs;
  std::optional<std::filesystem::path> path;
  if (!f.config.empty()) path = f.config;
  return unirep::load_config(path, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Universal representation learning pipeline on synthetic suites"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", f.out, "output directory (overrides out_dir)");
    sub->add_option("--seed", f.seed, "root seed (overrides seed)")->check(CLI::NonNegativeNumber);
    sub->add_option("--jobs", f.jobs, "parallel sub-jobs")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "generate and export the synthetic suite");
  auto* teachers = app.add_subcommand("train-teachers", "train one single-task teacher per task");
  auto* universal = app.add_subcommand("train-universal", "distill the teachers into a universal network");
  universal->add_flag("--vanilla", f.vanilla, "uniform multi-task baseline without distillation");
  auto* groups = app.add_subcommand("train-groups", "grouped distillation");
  auto* mtl = app.add_subcommand("eval-mtl", "test-split results table with dMTL/dMDL");
  auto* fewshot = app.add_subcommand("eval-fewshot", "episodic few-shot evaluation on meta-test classes");
  auto* retrieval = app.add_subcommand("eval-retrieval", "recall@k of universal features");
  auto* report = app.add_subcommand("report", "render tables and plots");
  report->add_option("--fixture", f.fixture, "results-table JSON to render instead of an output directory")
      ->check(CLI::ExistingFile);
  auto* show = app.add_subcommand("show-config", "print the materialized config");
  for (auto* s : {gen, teachers, universal, groups, mtl, fewshot, retrieval, report, show}) common(s);

  CLI11_PARSE(app, argc, argv);

  try {
    const unirep::ExperimentConfig cfg = load(f);
    if (!show->parsed()) std::filesystem::create_directories(cfg.out_dir);
    if (gen->parsed()) unirep::cmd_gen_data(cfg, std::cout);
    else if (teachers->parsed()) unirep::cmd_train_teachers(cfg, std::cout);
    else if (universal->parsed()) unirep::cmd_train_universal(cfg, f.vanilla, std::cout);
    else if (groups->parsed()) unirep::cmd_train_groups(cfg, std::cout);
    else if (mtl->parsed()) unirep::cmd_eval_mtl(cfg, std::cout);
    else if (fewshot->parsed()) unirep::cmd_eval_fewshot(cfg, std::cout);
    else if (retrieval->parsed()) unirep::cmd_eval_retrieval(cfg, std::cout);
    else if (report->parsed()) {
      std::optional<std::filesystem::path> fx;
      if (!f.fixture.empty()) fx = f.fixture;
      unirep::cmd_report(cfg, fx, std::cout);
    } else if (show->parsed()) {
      nlohmann::json doc = cfg.document;
      doc["out_dir"] = cfg.out_dir.generic_string();
      std::cout << doc.dump(2) << '\n';
    }
  } catch (const unirep::Error& e) {
    std::cerr << "error[" << unirep::category_name(e.category()) << "]: " << e.what() << '\n';
    return unirep::exit_code(e.category());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error[io]: " << e.what() << '\n';
    return unirep::exit_code(unirep::ErrorCategory::io);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error[io]: " << e.what() << '\n';
    return unirep::exit_code(unirep::ErrorCategory::io);
  }
  return 0;
}
