#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unirep/data.hpp"
#include "unirep/layers.hpp"

namespace unirep {

enum class EncoderMode { dense, classification };
std::string to_string(EncoderMode m);
EncoderMode parse_encoder_mode(const std::string& s);

struct EncoderSpec {
  EncoderMode mode = EncoderMode::dense;
  int channels = 16;  // C, output channels
  std::uint64_t seed = 0;
  bool operator==(const EncoderSpec&) const = default;
};

/// Four 3x3 conv+ReLU blocks (strides 1, 2, 2, 1). Dense mode yields
/// C x H/4 x W/4 features; classification mode appends global average pooling.
class Encoder {
 public:
  explicit Encoder(EncoderSpec spec);
  Tensor forward(const Tensor& x, SequentialCache* cache = nullptr) const;
  Tensor backward(const SequentialCache& cache, const Tensor& dy) { return net_.backward(cache, dy); }
  std::vector<NamedParam> params() { return net_.params(); }
  std::vector<ConstNamedParam> params() const { return net_.params(); }
  const EncoderSpec& spec() const { return spec_; }
  /// Feature shape (without batch) for an H x W input.
  Shape feature_shape(int h, int w) const;

 private:
  EncoderSpec spec_;
  Sequential net_;
};

Encoder build_encoder(EncoderMode mode, int channels, std::uint64_t seed);

/// Dense: two stride-2 transposed convolutions back to the label size.
/// Classification: one affine layer on the pooled feature.
class Decoder {
 public:
  Decoder(const TaskSpec& task, int channels, std::uint64_t seed);
  /// Dense output B x O x H x W; classification output B x O.
  Tensor forward(const Tensor& feature, SequentialCache* cache = nullptr) const;
  Tensor backward(const SequentialCache& cache, const Tensor& dy) { return net_.backward(cache, dy); }
  std::vector<NamedParam> params() { return net_.params(); }
  std::vector<ConstNamedParam> params() const { return net_.params(); }
  const TaskSpec& task() const { return task_; }

 private:
  TaskSpec task_;
  int channels_;
  Sequential net_;
};

enum class AdapterKind { identity, linear, nonlinear };
std::string to_string(AdapterKind k);
AdapterKind parse_adapter_kind(const std::string& s);

/// Shape-preserving map from the universal feature space to one teacher's.
/// Learnable kinds start at the identity map.
class Adapter {
 public:
  Adapter(AdapterKind kind, int channels, bool dense);
  Tensor forward(const Tensor& feature, SequentialCache* cache = nullptr) const;
  Tensor backward(const SequentialCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return net_.params(); }
  std::vector<ConstNamedParam> params() const { return net_.params(); }
  AdapterKind kind() const { return kind_; }

 private:
  AdapterKind kind_;
  Sequential net_;
};

struct SingleTaskModel {
  Encoder encoder;
  Decoder decoder;

  SingleTaskModel(const TaskSpec& task, EncoderSpec spec);
  Tensor predict(const Tensor& x) const { return decoder.forward(encoder.forward(x)); }
  std::vector<NamedParam> params();
  std::vector<ConstNamedParam> params() const;
  bool frozen() const;
};

struct UniversalOutput {
  Tensor feature;  // computed once, shared by every decoder
  std::map<std::string, Tensor> predictions;
  std::map<std::string, Tensor> adapted;  // only with adapters
};

class UniversalModel {
 public:
  UniversalModel(const std::vector<TaskSpec>& tasks, EncoderSpec spec, AdapterKind adapter);

  Encoder encoder;
  std::map<std::string, Decoder> decoders;
  std::map<std::string, Adapter> adapters;

  const std::vector<std::string>& task_ids() const { return task_ids_; }
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  AdapterKind adapter_kind() const { return adapter_kind_; }

  std::vector<NamedParam> params();
  std::vector<ConstNamedParam> params() const;
  /// Encoder and decoder parameters (the main optimizer group).
  std::vector<Param*> main_params();
  std::vector<Param*> adapter_params();

 private:
  std::vector<std::string> task_ids_;
  std::vector<TaskSpec> tasks_;
  AdapterKind adapter_kind_;
};

/// Inference pass. Adapters are evaluated only when `with_adapters`.
UniversalOutput forward_universal(const UniversalModel& model, const Tensor& x, bool with_adapters);

/// Order-stable FNV-1a hash over parameter names, shapes and bytes.
std::uint64_t params_checksum(const std::vector<ConstNamedParam>& params);
/// Disables gradients on every parameter and returns the checksum.
std::uint64_t freeze_and_checksum(SingleTaskModel& model);
std::uint64_t checksum(const SingleTaskModel& model);
std::uint64_t checksum(const UniversalModel& model);

// --- checkpoints ---------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// Named float32 arrays plus a JSON descriptor, stored as a directory with
/// manifest.json and one little-endian blob.
struct CheckpointData {
  std::string name;
  nlohmann::json architecture;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::filesystem::path& dir, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& dir);

nlohmann::json architecture_of(const SingleTaskModel& m);
nlohmann::json architecture_of(const UniversalModel& m);

void save_model(const std::filesystem::path& dir, const SingleTaskModel& m, const std::string& name,
                const nlohmann::json& extra = nlohmann::json::object());
void save_model(const std::filesystem::path& dir, const UniversalModel& m, const std::string& name,
                const nlohmann::json& extra = nlohmann::json::object());
/// Loads a single-task checkpoint; verifies the stored checksum when present
/// (IntegrityError on mismatch) and freezes the model if it was saved frozen.
SingleTaskModel load_single_task(const std::filesystem::path& dir);
UniversalModel load_universal(const std::filesystem::path& dir);

/// Copies tensors named in `data` into matching parameters.
void assign_params(const std::vector<NamedParam>& params, const CheckpointData& data,
                   const std::string& prefix = "");

}  // namespace unirep
