#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "unirep/errors.hpp"
#include "unirep/trainer.hpp"

using namespace unirep;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unirep_test_trainer_" + name);
  fs::remove_all(p);
  return p;
}

const DatasetSuite& dense() {
  static const DatasetSuite s = generate_dense_suite(3, 40, 16);
  return s;
}

RunConfig small_config(const fs::path& out) {
  RunConfig c;
  c.channels = 8;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 17;
  c.out_dir = out;
  c.distill = dense_preset();
  c.eval_batch_size = 16;
  return c;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string checkpoint_bytes(const fs::path& dir) {
  std::string all;
  std::set<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.insert(e.path());
  for (const auto& f : files) all += f.filename().string() + file_bytes(f);
  return all;
}

}  // namespace

TEST_CASE("stages and run config") {
  for (Stage s : {Stage::teachers, Stage::universal, Stage::groups}) CHECK(parse_stage(to_string(s)) == s);
  RunConfig c = small_config("x");
  CHECK_NOTHROW(c.validate(dense()));
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(dense()), ConfigError);
  CHECK(to_json(small_config("x")).at("channels") == 8);
}

TEST_CASE("teachers train, freeze and load back") {
  const fs::path out = scratch("teachers");
  RunConfig c = small_config(out);
  c.stage = Stage::teachers;
  c.epochs = 1;
  const auto records = train_teachers(dense(), c);
  REQUIRE(records.size() == 3);
  const auto loaded = load_teachers(out, {"seg", "depth", "normals"});
  for (const auto& [id, m] : loaded) {
    CHECK(m.frozen());
    CHECK(checksum(m) == records.at(id).checksum);
  }
  CHECK(fs::exists(out / "teachers" / "teachers.json"));
  CHECK_THROWS_AS(load_teachers(scratch("none"), {"seg"}), DependencyError);
  fs::remove_all(out);
}

TEST_CASE("universal training keeps teachers intact and reruns byte-identically") {
  const fs::path out = scratch("universal");
  RunConfig tc = small_config(out);
  tc.stage = Stage::teachers;
  tc.epochs = 1;
  train_teachers(dense(), tc);
  const auto teachers = load_teachers(out, {"seg", "depth", "normals"});

  const RunConfig c = small_config(out);
  const UniversalRun a = train_universal(dense(), c, teachers, out / "a");
  const UniversalRun b = train_universal(dense(), c, teachers, out / "b");
  CHECK(a.teacher_checksums_before == a.teacher_checksums_after);
  CHECK(checkpoint_bytes(out / "a" / "model") == checkpoint_bytes(out / "b" / "model"));
  CHECK(file_bytes(out / "a" / "metrics.jsonl") == file_bytes(out / "b" / "metrics.jsonl"));
  REQUIRE(a.train.loss_trace.size() == b.train.loss_trace.size());
  CHECK(a.train.epochs_completed == 2);
  CHECK(fs::exists(a.train.best_checkpoint / "manifest.json"));
  CHECK(fs::exists(out / "a" / "config.json"));

  SUBCASE("resume after an interruption reproduces the loss trace") {
    RunConfig first = c;
    const long stop = static_cast<long>(a.train.loss_trace.size()) / 2 + 1;
    first.stop_after_iteration = stop;
    const UniversalRun part = train_universal(dense(), first, teachers, out / "r");
    CHECK(part.train.interrupted);
    RunConfig second = c;
    second.resume = true;
    const UniversalRun rest = train_universal(dense(), second, teachers, out / "r");
    CHECK_FALSE(rest.train.interrupted);
    std::map<long, double> full(a.train.loss_trace.begin(), a.train.loss_trace.end());
    REQUIRE_FALSE(rest.train.loss_trace.empty());
    for (const auto& [it, v] : rest.train.loss_trace) CHECK(std::abs(full.at(it) - v) <= 1e-6);
    CHECK(rest.train.loss_trace.back().first == a.train.loss_trace.back().first);
    CHECK(checkpoint_bytes(out / "r" / "model") == checkpoint_bytes(out / "a" / "model"));
  }
  fs::remove_all(out);
}

TEST_CASE("balancers plug into the training loop") {
  const fs::path out = scratch("balancers");
  for (BalancerKind k : {BalancerKind::uncertainty, BalancerKind::dwa, BalancerKind::pcgrad}) {
    RunConfig c = small_config(out);
    c.epochs = 3;
    c.balancer = k;
    c.distill = without_distillation(dense_preset());
    UniversalModel m(dense().tasks, EncoderSpec{EncoderMode::dense, 8, 2}, AdapterKind::linear);
    const TrainResult r = train_model(dense(), m, {}, c, out / to_string(k));
    CHECK(r.epochs_completed == 3);
    for (const auto& [it, v] : r.loss_trace) CHECK(std::isfinite(v));
  }
  fs::remove_all(out);
}

TEST_CASE("group plans partition the tasks") {
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = plan_groups(ids, 2, seed);
    REQUIRE(g.size() == 2);
    std::multiset<std::string> all;
    for (const auto& grp : g) {
      CHECK_FALSE(grp.members.empty());
      all.insert(grp.members.begin(), grp.members.end());
    }
    CHECK(all == std::multiset<std::string>(ids.begin(), ids.end()));
    CHECK(std::abs(static_cast<int>(g[0].members.size()) - static_cast<int>(g[1].members.size())) <= 1);
  }
  const auto anchored = plan_groups(ids, 3, 1, std::string("c"));
  CHECK(anchored[0].members == std::vector<std::string>{"c"});
  CHECK(plan_groups(ids, 2, 4)[0].members == plan_groups(ids, 2, 4)[0].members);
  CHECK_THROWS_AS(plan_groups(ids, 0, 1), ConfigError);
  CHECK_THROWS_AS(plan_groups(ids, 6, 1), ConfigError);
}

TEST_CASE("grouped training produces a final universal model") {
  const fs::path out = scratch("groups");
  RunConfig tc = small_config(out);
  tc.stage = Stage::teachers;
  tc.epochs = 1;
  train_teachers(dense(), tc);
  const auto teachers = load_teachers(out, {"seg", "depth", "normals"});
  RunConfig c = small_config(out);
  c.stage = Stage::groups;
  c.epochs = 1;
  const GroupedRun r = train_grouped(dense(), c, teachers, plan_groups({"seg", "depth", "normals"}, 2, 5), out / "g");
  CHECK(r.groups.size() == 2);
  for (const auto& g : r.groups) CHECK(fs::exists(g.checkpoint / "manifest.json"));
  CHECK(fs::exists(out / "g" / "final" / "model" / "manifest.json"));
  CHECK(fs::exists(out / "g" / "groups.json"));
  fs::remove_all(out);
}

TEST_CASE("run_jobs runs everything and rethrows") {
  std::vector<int> done(5, 0);
  std::vector<std::function<void()>> work;
  for (int i = 0; i < 5; ++i) work.push_back([&done, i] { done[static_cast<std::size_t>(i)] = 1; });
  run_jobs(work, 2);
  CHECK(done == std::vector<int>(5, 1));
  work.push_back([] { throw IoError("boom"); });
  CHECK_THROWS_AS(run_jobs(work, 3), IoError);
}

TEST_CASE("flips mirror images and the x component of normals") {
  Batch b = make_batch(dense(), Split::train, {0, 1, 2, 3, 4, 5, 6, 7});
  const Batch orig = b;
  Rng rng(1);
  flip_batch(b, dense(), rng);
  const int hw = 16;
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;
  int flipped = 0;
  for (std::size_t r = 0; r < 8; ++r) {
    const bool same = b.images.gather_rows(std::vector<int>{static_cast<int>(r)}) ==
                      orig.images.gather_rows(std::vector<int>{static_cast<int>(r)});
    if (same) continue;
    ++flipped;
    const auto& n0 = orig.labels.at("normals")[r]->floats;
    const auto& n1 = b.labels.at("normals")[r]->floats;
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x) {
        const std::size_t p = static_cast<std::size_t>(y * hw + x), q = static_cast<std::size_t>(y * hw + hw - 1 - x);
        CHECK(n1[p] == -n0[q]);
        CHECK(n1[plane + p] == n0[plane + q]);
        CHECK(b.labels.at("seg")[r]->ints[p] == orig.labels.at("seg")[r]->ints[q]);
      }
  }
  CHECK(flipped > 0);
  CHECK(flipped < 8);
}
