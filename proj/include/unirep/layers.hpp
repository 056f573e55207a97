#pragma once

#include <string>
#include <variant>
#include <vector>

#include "unirep/kernels.hpp"
#include "unirep/rng.hpp"
#include "unirep/tensor.hpp"

namespace unirep {

/// A learnable array and its accumulated gradient. Frozen parameters never
/// accumulate gradients and are skipped by every optimizer.
struct Param {
  Tensor value;
  Tensor grad;
  bool frozen = false;

  Param() = default;
  explicit Param(Shape s) : value(s), grad(std::move(s)) {}
  void zero_grad() { grad.fill(0.0f); }
};

struct NamedParam {
  std::string name;
  Param* param;
};
struct ConstNamedParam {
  std::string name;
  const Param* param;
};

/// Activations a layer saves during a training forward pass.
struct LayerCache {
  Tensor input;
  Tensor aux;
};

class Conv2d {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, LayerCache* cache) const;
  Tensor backward(const LayerCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return {{"weight", &weight_}, {"bias", &bias_}}; }
  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  /// Sets the weights to the identity map (1x1 kernels with in == out only).
  void set_identity();

 private:
  kernels::ConvGeometry geometry(const Tensor& x) const;
  int in_, out_, kernel_, stride_, pad_;
  Param weight_, bias_;
};

/// Transposed convolution; weight layout (in, out, k, k).
class ConvTranspose2d {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, LayerCache* cache) const;
  Tensor backward(const LayerCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return {{"weight", &weight_}, {"bias", &bias_}}; }

 private:
  kernels::ConvGeometry geometry(const Tensor& x) const;
  int in_, out_, kernel_, stride_, pad_;
  Param weight_, bias_;
};

/// Fully connected map on N x in rows; weight layout (out, in).
class Linear {
 public:
  Linear(int in_features, int out_features);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, LayerCache* cache) const;
  Tensor backward(const LayerCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return {{"weight", &weight_}, {"bias", &bias_}}; }
  void set_identity();

 private:
  int in_, out_;
  Param weight_, bias_;
};

class Relu {
 public:
  void init(Rng&) {}
  Tensor forward(const Tensor& x, LayerCache* cache) const;
  Tensor backward(const LayerCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return {}; }
};

/// N x C x H x W -> N x C.
class GlobalAvgPool {
 public:
  void init(Rng&) {}
  Tensor forward(const Tensor& x, LayerCache* cache) const;
  Tensor backward(const LayerCache& cache, const Tensor& dy);
  std::vector<NamedParam> params() { return {}; }
};

using Layer = std::variant<Conv2d, ConvTranspose2d, Linear, Relu, GlobalAvgPool>;

struct SequentialCache {
  std::vector<LayerCache> layers;
};

class Sequential {
 public:
  Sequential() = default;

  template <typename L>
  L& add(L layer) {
    layers_.emplace_back(std::move(layer));
    return std::get<L>(layers_.back());
  }

  void init(Rng& rng);
  /// Evaluation when `cache` is null; otherwise saves activations for backward.
  Tensor forward(const Tensor& x, SequentialCache* cache = nullptr) const;
  /// Accumulates parameter gradients and returns the input gradient.
  Tensor backward(const SequentialCache& cache, const Tensor& dy);

  std::vector<NamedParam> params();
  std::vector<ConstNamedParam> params() const;
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& layer(std::size_t i) { return layers_.at(i); }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }

 private:
  std::vector<Layer> layers_;
};

}  // namespace unirep
