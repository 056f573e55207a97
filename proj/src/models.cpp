#include "unirep/models.hpp"

#include <cstring>

#include "unirep/errors.hpp"
#include "unirep/rng.hpp"

namespace unirep {

std::string to_string(EncoderMode m) { return m == EncoderMode::dense ? "dense" : "classification"; }

EncoderMode parse_encoder_mode(const std::string& s) {
  if (s == "dense") return EncoderMode::dense;
  if (s == "classification") return EncoderMode::classification;
  throw ConfigError("unknown encoder mode '" + s + "'");
}

std::string to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::identity: return "identity";
    case AdapterKind::linear: return "linear";
    case AdapterKind::nonlinear: return "nonlinear";
  }
  return "?";
}

AdapterKind parse_adapter_kind(const std::string& s) {
  if (s == "identity" || s == "none") return AdapterKind::identity;
  if (s == "linear") return AdapterKind::linear;
  if (s == "nonlinear") return AdapterKind::nonlinear;
  throw ConfigError("unknown adapter kind '" + s + "'");
}

// --- Encoder -------------------------------------------------------------------

Encoder::Encoder(EncoderSpec spec) : spec_(spec) {
  if (spec_.channels < 8) throw ConfigError("encoder channels must be >= 8");
  const int c = spec_.channels;
  const int stem = c / 2;
  net_.add(Conv2d(3, stem, 3, 1, 1));
  net_.add(Relu{});
  net_.add(Conv2d(stem, c, 3, 2, 1));
  net_.add(Relu{});
  net_.add(Conv2d(c, c, 3, 2, 1));
  net_.add(Relu{});
  net_.add(Conv2d(c, c, 3, 1, 1));
  net_.add(Relu{});
  if (spec_.mode == EncoderMode::classification) net_.add(GlobalAvgPool{});
  Rng rng(derive_seed(spec_.seed, "encoder"));
  net_.init(rng);
}

Tensor Encoder::forward(const Tensor& x, SequentialCache* cache) const {
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw ShapeError("encoder expects B x 3 x H x W with H, W divisible by 4; got " +
                     shape_str(x.shape()));
  }
  return net_.forward(x, cache);
}

Shape Encoder::feature_shape(int h, int w) const {
  if (spec_.mode == EncoderMode::classification) return {spec_.channels};
  return {spec_.channels, h / 4, w / 4};
}

Encoder build_encoder(EncoderMode mode, int channels, std::uint64_t seed) {
  return Encoder(EncoderSpec{mode, channels, seed});
}

// --- Decoder -------------------------------------------------------------------

Decoder::Decoder(const TaskSpec& task, int channels, std::uint64_t seed)
    : task_(task), channels_(channels) {
  task_.validate();
  if (task_.kind == TaskKind::dense) {
    const int mid = std::max(4, channels / 2);
    net_.add(ConvTranspose2d(channels, mid, 4, 2, 1));
    net_.add(Relu{});
    net_.add(ConvTranspose2d(mid, task_.out_channels, 4, 2, 1));
  } else {
    net_.add(Linear(channels, task_.out_channels));
  }
  Rng rng(derive_seed(seed, "decoder/" + task_.id));
  net_.init(rng);
}

Tensor Decoder::forward(const Tensor& feature, SequentialCache* cache) const {
  if (task_.kind == TaskKind::dense) {
    if (feature.rank() != 4 || feature.dim(1) != channels_) {
      throw ShapeError("decoder '" + task_.id + "' expects B x " + std::to_string(channels_) +
                       " x h x w features; got " + shape_str(feature.shape()));
    }
    if (feature.dim(2) * 4 != task_.out_height || feature.dim(3) * 4 != task_.out_width) {
      throw ShapeError("decoder '" + task_.id + "': feature " + shape_str(feature.shape()) +
                       " does not upsample to the task's output size");
    }
  } else if (feature.rank() != 2 || feature.dim(1) != channels_) {
    throw ShapeError("decoder '" + task_.id + "' expects B x " + std::to_string(channels_) +
                     " features; got " + shape_str(feature.shape()));
  }
  return net_.forward(feature, cache);
}

// --- Adapter -------------------------------------------------------------------

Adapter::Adapter(AdapterKind kind, int channels, bool dense) : kind_(kind) {
  auto add_linear = [&] {
    if (dense) {
      net_.add(Conv2d(channels, channels, 1, 1, 0)).set_identity();
    } else {
      net_.add(Linear(channels, channels)).set_identity();
    }
  };
  switch (kind) {
    case AdapterKind::identity: break;
    case AdapterKind::linear: add_linear(); break;
    case AdapterKind::nonlinear:
      add_linear();
      net_.add(Relu{});
      add_linear();
      break;
  }
}

Tensor Adapter::forward(const Tensor& feature, SequentialCache* cache) const {
  if (kind_ == AdapterKind::identity) {
    if (cache) cache->layers.clear();
    return feature;
  }
  return net_.forward(feature, cache);
}

Tensor Adapter::backward(const SequentialCache& cache, const Tensor& dy) {
  if (kind_ == AdapterKind::identity) return dy;
  return net_.backward(cache, dy);
}

// --- models --------------------------------------------------------------------

namespace {

void append_prefixed(std::vector<NamedParam>& out, std::vector<NamedParam> ps, const std::string& prefix) {
  for (auto& p : ps) out.push_back({prefix + p.name, p.param});
}

std::vector<ConstNamedParam> to_const(std::vector<NamedParam> ps) {
  std::vector<ConstNamedParam> out;
  for (auto& p : ps) out.push_back({p.name, p.param});
  return out;
}

}  // namespace

SingleTaskModel::SingleTaskModel(const TaskSpec& task, EncoderSpec spec)
    : encoder(spec), decoder(task, spec.channels, spec.seed) {
  const bool dense_task = task.kind == TaskKind::dense;
  if (dense_task != (spec.mode == EncoderMode::dense)) {
    throw ConfigError("task '" + task.id + "' kind does not match the encoder mode");
  }
}

std::vector<NamedParam> SingleTaskModel::params() {
  std::vector<NamedParam> out;
  append_prefixed(out, encoder.params(), "encoder.");
  append_prefixed(out, decoder.params(), "decoder.");
  return out;
}

std::vector<ConstNamedParam> SingleTaskModel::params() const {
  return to_const(const_cast<SingleTaskModel*>(this)->params());
}

bool SingleTaskModel::frozen() const {
  for (const auto& p : params())
    if (!p.param->frozen) return false;
  return true;
}

UniversalModel::UniversalModel(const std::vector<TaskSpec>& tasks, EncoderSpec spec, AdapterKind adapter)
    : encoder(spec), tasks_(tasks), adapter_kind_(adapter) {
  if (tasks.empty()) throw ConfigError("a universal model needs at least one task");
  const bool dense = spec.mode == EncoderMode::dense;
  for (const auto& t : tasks) {
    if ((t.kind == TaskKind::dense) != dense) {
      throw ConfigError("task '" + t.id + "' kind does not match the encoder mode");
    }
    if (decoders.contains(t.id)) throw ConfigError("duplicate task id '" + t.id + "'");
    task_ids_.push_back(t.id);
    decoders.emplace(t.id, Decoder(t, spec.channels, spec.seed));
    adapters.emplace(t.id, Adapter(adapter, spec.channels, dense));
  }
}

std::vector<NamedParam> UniversalModel::params() {
  std::vector<NamedParam> out;
  append_prefixed(out, encoder.params(), "encoder.");
  for (const auto& id : task_ids_) append_prefixed(out, decoders.at(id).params(), "decoder." + id + ".");
  for (const auto& id : task_ids_) append_prefixed(out, adapters.at(id).params(), "adapter." + id + ".");
  return out;
}

std::vector<ConstNamedParam> UniversalModel::params() const {
  return to_const(const_cast<UniversalModel*>(this)->params());
}

std::vector<Param*> UniversalModel::main_params() {
  std::vector<Param*> out;
  for (auto& p : encoder.params()) out.push_back(p.param);
  for (const auto& id : task_ids_)
    for (auto& p : decoders.at(id).params()) out.push_back(p.param);
  return out;
}

std::vector<Param*> UniversalModel::adapter_params() {
  std::vector<Param*> out;
  for (const auto& id : task_ids_)
    for (auto& p : adapters.at(id).params()) out.push_back(p.param);
  return out;
}

UniversalOutput forward_universal(const UniversalModel& model, const Tensor& x, bool with_adapters) {
  UniversalOutput out;
  out.feature = model.encoder.forward(x);
  for (const auto& id : model.task_ids()) {
    out.predictions.emplace(id, model.decoders.at(id).forward(out.feature));
    if (with_adapters) out.adapted.emplace(id, model.adapters.at(id).forward(out.feature));
  }
  return out;
}

std::uint64_t params_checksum(const std::vector<ConstNamedParam>& params) {
  std::uint64_t h = fnv1a("unirep-params");
  for (const auto& p : params) {
    h = fnv1a(p.name, h);
    for (int d : p.param->value.shape()) {
      const auto dd = static_cast<std::int64_t>(d);
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(&dd), sizeof dd), h);
    }
    const auto& v = p.param->value.vec();
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float)), h);
  }
  return h;
}

std::uint64_t freeze_and_checksum(SingleTaskModel& model) {
  for (auto& p : model.params()) {
    p.param->frozen = true;
    p.param->zero_grad();
  }
  return checksum(model);
}

std::uint64_t checksum(const SingleTaskModel& model) { return params_checksum(model.params()); }
std::uint64_t checksum(const UniversalModel& model) { return params_checksum(model.params()); }

}  // namespace unirep
