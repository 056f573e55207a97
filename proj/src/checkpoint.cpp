#include <fstream>

#include "unirep/binary_io.hpp"
#include "unirep/errors.hpp"
#include "unirep/models.hpp"

namespace unirep {

namespace fs = std::filesystem;
using nlohmann::json;

void write_checkpoint(const fs::path& dir, const CheckpointData& data) {
  fs::create_directories(dir);
  json tensors = json::array();
  std::size_t offset = 0;
  std::ofstream blob(dir / "tensors.f32", std::ios::binary | std::ios::trunc);
  if (!blob) throw IoError("cannot write " + (dir / "tensors.f32").string());
  for (const auto& [name, t] : data.tensors) {
    tensors.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"dtype", "float32"},
                       {"byte_order", "little"},
                       {"offset", offset},
                       {"count", t.size()}});
    io::write_le(blob, t.span());
    offset += t.size();
  }
  if (!blob) throw IoError("short write to " + (dir / "tensors.f32").string());
  json manifest = {{"format", "unirep-checkpoint"},
                   {"version", kCheckpointVersion},
                   {"name", data.name},
                   {"seed", data.seed},
                   {"architecture", data.architecture},
                   {"extra", data.extra},
                   {"blob", "tensors.f32"},
                   {"tensors", tensors}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

CheckpointData read_checkpoint(const fs::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw DependencyError("no checkpoint at " + dir.string());
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  if (m.value("format", "") != "unirep-checkpoint") throw IoError("not a checkpoint: " + dir.string());
  if (!m.contains("version")) throw IoError("checkpoint without version field: " + dir.string());
  if (m.at("version").get<int>() != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + m.at("version").dump() + " in " + dir.string());
  }
  CheckpointData d;
  d.name = m.at("name").get<std::string>();
  d.seed = m.at("seed").get<std::uint64_t>();
  d.architecture = m.at("architecture");
  d.extra = m.value("extra", json::object());
  std::size_t total = 0;
  for (const auto& t : m.at("tensors")) total += t.at("count").get<std::size_t>();
  const auto values = io::read_blob<float>(dir / m.at("blob").get<std::string>(), total);
  for (const auto& t : m.at("tensors")) {
    if (t.at("dtype") != "float32" || t.at("byte_order") != "little") {
      throw IoError("unsupported tensor encoding in " + dir.string());
    }
    const auto off = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (off + count > values.size()) throw IoError("tensor out of blob bounds in " + dir.string());
    d.tensors.emplace_back(t.at("name").get<std::string>(),
                           Tensor(t.at("shape").get<Shape>(),
                                  std::vector<float>(values.begin() + static_cast<std::ptrdiff_t>(off),
                                                     values.begin() + static_cast<std::ptrdiff_t>(off + count))));
  }
  return d;
}

namespace {

json encoder_json(const EncoderSpec& s) {
  return {{"mode", to_string(s.mode)}, {"channels", s.channels}, {"seed", s.seed}};
}

EncoderSpec encoder_from_json(const json& j) {
  return {parse_encoder_mode(j.at("mode").get<std::string>()), j.at("channels").get<int>(),
          j.at("seed").get<std::uint64_t>()};
}

std::vector<std::pair<std::string, Tensor>> collect(const std::vector<ConstNamedParam>& ps) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : ps) out.emplace_back(p.name, p.param->value);
  return out;
}

}  // namespace

json architecture_of(const SingleTaskModel& m) {
  return {{"type", "single_task"}, {"encoder", encoder_json(m.encoder.spec())}, {"task", task_to_json(m.decoder.task())}};
}

json architecture_of(const UniversalModel& m) {
  json tasks = json::array();
  for (const auto& t : m.tasks()) tasks.push_back(task_to_json(t));
  return {{"type", "universal"},
          {"encoder", encoder_json(m.encoder.spec())},
          {"tasks", tasks},
          {"adapter", to_string(m.adapter_kind())}};
}

void assign_params(const std::vector<NamedParam>& params, const CheckpointData& data, const std::string& prefix) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : data.tensors) by_name[n] = &t;
  for (const auto& p : params) {
    auto it = by_name.find(prefix + p.name);
    if (it == by_name.end()) throw IntegrityError("checkpoint '" + data.name + "' lacks tensor " + prefix + p.name);
    if (it->second->shape() != p.param->value.shape()) {
      throw IntegrityError("tensor " + p.name + " has shape " + shape_str(it->second->shape()) +
                           ", expected " + shape_str(p.param->value.shape()));
    }
    p.param->value = *it->second;
  }
}

void save_model(const fs::path& dir, const SingleTaskModel& m, const std::string& name, const json& extra) {
  CheckpointData d;
  d.name = name;
  d.architecture = architecture_of(m);
  d.seed = m.encoder.spec().seed;
  d.extra = extra;
  d.extra["checksum"] = checksum(m);
  d.extra["frozen"] = m.frozen();
  d.tensors = collect(m.params());
  write_checkpoint(dir, d);
}

void save_model(const fs::path& dir, const UniversalModel& m, const std::string& name, const json& extra) {
  CheckpointData d;
  d.name = name;
  d.architecture = architecture_of(m);
  d.seed = m.encoder.spec().seed;
  d.extra = extra;
  d.extra["checksum"] = checksum(m);
  d.tensors = collect(m.params());
  write_checkpoint(dir, d);
}

SingleTaskModel load_single_task(const fs::path& dir) {
  const auto d = read_checkpoint(dir);
  if (d.architecture.value("type", "") != "single_task") {
    throw IntegrityError(dir.string() + " is not a single-task checkpoint");
  }
  SingleTaskModel m(task_from_json(d.architecture.at("task")), encoder_from_json(d.architecture.at("encoder")));
  assign_params(m.params(), d);
  if (d.extra.contains("checksum") && d.extra.at("checksum").get<std::uint64_t>() != checksum(m)) {
    throw IntegrityError("checksum mismatch for teacher checkpoint " + dir.string());
  }
  if (d.extra.value("frozen", false)) freeze_and_checksum(m);
  return m;
}

UniversalModel load_universal(const fs::path& dir) {
  const auto d = read_checkpoint(dir);
  if (d.architecture.value("type", "") != "universal") {
    throw IntegrityError(dir.string() + " is not a universal-model checkpoint");
  }
  std::vector<TaskSpec> tasks;
  for (const auto& t : d.architecture.at("tasks")) tasks.push_back(task_from_json(t));
  UniversalModel m(tasks, encoder_from_json(d.architecture.at("encoder")),
                   parse_adapter_kind(d.architecture.at("adapter").get<std::string>()));
  assign_params(m.params(), d);
  if (d.extra.contains("checksum") && d.extra.at("checksum").get<std::uint64_t>() != checksum(m)) {
    throw IntegrityError("checksum mismatch for checkpoint " + dir.string());
  }
  return m;
}

}  // namespace unirep
