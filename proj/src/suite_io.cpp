#include <fstream>

#include <nlohmann/json.hpp>

#include "unirep/binary_io.hpp"
#include "unirep/data.hpp"

namespace unirep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kSuiteFormatVersion = 1;
constexpr Split kSplitOrder[] = {Split::train, Split::val, Split::test, Split::meta_test};

}  // namespace

json task_to_json(const TaskSpec& t) {
  return {{"id", t.id},
          {"kind", to_string(t.kind)},
          {"out_channels", t.out_channels},
          {"out_height", t.out_height},
          {"out_width", t.out_width},
          {"loss", to_string(t.loss)},
          {"metric", to_string(t.metric)},
          {"lower_is_better", t.lower_is_better}};
}

TaskSpec task_from_json(const json& j) {
  TaskSpec t;
  t.id = j.at("id").get<std::string>();
  t.kind = parse_task_kind(j.at("kind").get<std::string>());
  t.out_channels = j.at("out_channels").get<int>();
  t.out_height = j.at("out_height").get<int>();
  t.out_width = j.at("out_width").get<int>();
  t.loss = parse_task_loss(j.at("loss").get<std::string>());
  t.metric = parse_task_metric(j.at("metric").get<std::string>());
  t.lower_is_better = j.at("lower_is_better").get<bool>();
  t.validate();
  return t;
}

namespace {

json array_entry(const std::string& name, const std::string& dtype, const Shape& shape,
                 const std::string& file) {
  return {{"name", name}, {"dtype", dtype}, {"shape", shape}, {"byte_order", "little"}, {"file", file}};
}

}  // namespace

void export_suite(const DatasetSuite& suite, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<const LabeledSample*> all;
  json splits = json::object();
  for (Split sp : kSplitOrder) {
    auto it = suite.splits.find(sp);
    if (it == suite.splits.end()) continue;
    std::vector<int> idx;
    for (const auto& s : it->second) {
      idx.push_back(static_cast<int>(all.size()));
      all.push_back(&s);
    }
    splits[to_string(sp)] = idx;
  }
  const int hw = suite.image_size;
  json arrays = json::array();

  std::vector<float> images;
  images.reserve(all.size() * 3 * static_cast<std::size_t>(hw) * hw);
  std::vector<std::int32_t> meta;
  for (const auto* s : all) {
    images.insert(images.end(), s->image.vec().begin(), s->image.vec().end());
    meta.push_back(s->domain);
    meta.push_back(s->class_label);
  }
  io::write_blob<float>(dir / "images.f32", images);
  arrays.push_back(array_entry("images", "float32", {static_cast<int>(all.size()), 3, hw, hw}, "images.f32"));
  io::write_blob<std::int32_t>(dir / "sample_meta.i32", meta);
  arrays.push_back(array_entry("sample_meta", "int32", {static_cast<int>(all.size()), 2}, "sample_meta.i32"));

  for (const auto& t : suite.tasks) {
    std::vector<std::int32_t> rows, ints;
    std::vector<float> floats;
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto it = all[i]->labels.find(t.id);
      if (it == all[i]->labels.end()) continue;
      rows.push_back(static_cast<std::int32_t>(i));
      ints.insert(ints.end(), it->second.ints.begin(), it->second.ints.end());
      floats.insert(floats.end(), it->second.floats.begin(), it->second.floats.end());
    }
    const int n = static_cast<int>(rows.size());
    io::write_blob<std::int32_t>(dir / ("rows_" + t.id + ".i32"), rows);
    arrays.push_back(array_entry("rows/" + t.id, "int32", {n}, "rows_" + t.id + ".i32"));
    if (!ints.empty()) {
      io::write_blob<std::int32_t>(dir / ("label_" + t.id + ".i32"), ints);
      const int per = static_cast<int>(ints.size()) / std::max(1, n);
      arrays.push_back(array_entry("label/" + t.id, "int32", {n, per}, "label_" + t.id + ".i32"));
    }
    if (!floats.empty()) {
      io::write_blob<float>(dir / ("label_" + t.id + ".f32"), floats);
      const int per = static_cast<int>(floats.size()) / std::max(1, n);
      arrays.push_back(array_entry("label/" + t.id, "float32", {n, per}, "label_" + t.id + ".f32"));
    }
  }

  json tasks = json::array();
  for (const auto& t : suite.tasks) tasks.push_back(task_to_json(t));
  json domains = json::array();
  for (const auto& d : suite.domains) {
    domains.push_back({{"task_id", d.task_id},
                       {"style", d.style},
                       {"label_offset", d.label_offset},
                       {"n_train_classes", d.n_train_classes},
                       {"n_meta_classes", d.n_meta_classes},
                       {"withheld", d.withheld}});
  }
  json manifest = {{"format", "unirep-suite"},
                   {"version", kSuiteFormatVersion},
                   {"mode", to_string(suite.mode)},
                   {"seed", suite.seed},
                   {"image_size", hw},
                   {"tasks", tasks},
                   {"domains", domains},
                   {"splits", splits},
                   {"arrays", arrays},
                   {"content_hash", suite.content_hash()}};
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

DatasetSuite import_suite(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DependencyError("no suite manifest at " + (dir / "manifest.json").string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("malformed suite manifest: " + std::string(e.what()));
  }
  if (m.value("format", "") != "unirep-suite") throw IoError("not a suite manifest: " + dir.string());
  if (m.at("version").get<int>() != kSuiteFormatVersion) {
    throw IoError("unsupported suite format version " + m.at("version").dump());
  }
  DatasetSuite suite;
  suite.mode = m.at("mode").get<std::string>() == "mtl" ? SuiteMode::mtl : SuiteMode::mdl;
  suite.seed = m.at("seed").get<std::uint64_t>();
  suite.image_size = m.at("image_size").get<int>();
  for (const auto& t : m.at("tasks")) suite.tasks.push_back(task_from_json(t));
  for (const auto& d : m.at("domains")) {
    suite.domains.push_back({d.at("task_id").get<std::string>(), d.at("style").get<std::string>(),
                             d.at("label_offset").get<int>(), d.at("n_train_classes").get<int>(),
                             d.at("n_meta_classes").get<int>(), d.at("withheld").get<bool>()});
  }
  std::size_t total = 0;
  for (const auto& [name, idx] : m.at("splits").items()) total += idx.size();
  const int hw = suite.image_size;
  const std::size_t img = 3 * static_cast<std::size_t>(hw) * hw;
  const auto images = io::read_blob<float>(dir / "images.f32", total * img);
  const auto meta = io::read_blob<std::int32_t>(dir / "sample_meta.i32", total * 2);
  std::vector<LabeledSample> all(total);
  for (std::size_t i = 0; i < total; ++i) {
    all[i].image = Tensor({3, hw, hw}, std::vector<float>(images.begin() + static_cast<std::ptrdiff_t>(i * img),
                                                           images.begin() + static_cast<std::ptrdiff_t>((i + 1) * img)));
    all[i].domain = meta[2 * i];
    all[i].class_label = meta[2 * i + 1];
  }
  std::map<std::string, std::vector<std::int32_t>> rows_by_task;
  for (const auto& a : m.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    const auto shape = a.at("shape").get<std::vector<int>>();
    const fs::path file = dir / a.at("file").get<std::string>();
    if (name.rfind("rows/", 0) == 0) {
      rows_by_task[name.substr(5)] = io::read_blob<std::int32_t>(file, shape_numel(shape));
    }
  }
  for (const auto& a : m.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    if (name.rfind("label/", 0) != 0) continue;
    const std::string task = name.substr(6);
    const auto shape = a.at("shape").get<std::vector<int>>();
    const auto& rows = rows_by_task.at(task);
    const std::size_t per = static_cast<std::size_t>(shape.at(1));
    const fs::path file = dir / a.at("file").get<std::string>();
    if (a.at("dtype") == "int32") {
      const auto v = io::read_blob<std::int32_t>(file, rows.size() * per);
      for (std::size_t r = 0; r < rows.size(); ++r)
        all.at(static_cast<std::size_t>(rows[r])).labels[task].ints.assign(v.begin() + static_cast<std::ptrdiff_t>(r * per),
                                                                           v.begin() + static_cast<std::ptrdiff_t>((r + 1) * per));
    } else {
      const auto v = io::read_blob<float>(file, rows.size() * per);
      for (std::size_t r = 0; r < rows.size(); ++r)
        all.at(static_cast<std::size_t>(rows[r])).labels[task].floats.assign(v.begin() + static_cast<std::ptrdiff_t>(r * per),
                                                                             v.begin() + static_cast<std::ptrdiff_t>((r + 1) * per));
    }
  }
  for (const auto& [name, idx] : m.at("splits").items()) {
    auto& out = suite.splits[parse_split(name)];
    for (int i : idx.get<std::vector<int>>()) out.push_back(std::move(all.at(static_cast<std::size_t>(i))));
  }
  if (m.contains("content_hash") && m.at("content_hash").get<std::uint64_t>() != suite.content_hash()) {
    throw IntegrityError("suite content hash mismatch in " + dir.string());
  }
  return suite;
}

}  // namespace unirep
