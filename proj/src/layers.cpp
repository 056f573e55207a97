#include "unirep/layers.hpp"

#include <algorithm>
#include <cmath>

#include "unirep/errors.hpp"

namespace unirep {

namespace {

void he_normal(Tensor& w, double fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / fan_in);
  for (float& v : w.vec()) v = static_cast<float>(rng.normal() * std);
}

void require_rank(const Tensor& x, std::size_t r, const char* who) {
  if (x.rank() != r) {
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(r) + " input, got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

// --- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      weight_({out_channels, in_channels, kernel, kernel}), bias_({out_channels}) {}

void Conv2d::init(Rng& rng) {
  he_normal(weight_.value, static_cast<double>(in_) * kernel_ * kernel_, rng);
  bias_.value.fill(0.0f);
}

void Conv2d::set_identity() {
  if (kernel_ != 1 || in_ != out_) throw ConfigError("identity init needs a square 1x1 conv");
  weight_.value.fill(0.0f);
  for (int c = 0; c < out_; ++c) weight_.value[static_cast<std::size_t>(c * in_ + c)] = 1.0f;
  bias_.value.fill(0.0f);
}

kernels::ConvGeometry Conv2d::geometry(const Tensor& x) const {
  require_rank(x, 4, "conv2d");
  if (x.dim(1) != in_) {
    throw ShapeError("conv2d: expected " + std::to_string(in_) + " input channels, got " +
                     shape_str(x.shape()));
  }
  return {in_, out_, kernel_, stride_, pad_, x.dim(2), x.dim(3)};
}

Tensor Conv2d::forward(const Tensor& x, LayerCache* cache) const {
  const auto g = geometry(x);
  const int n = x.dim(0);
  Tensor y({n, out_, g.out_h(), g.out_w()});
  if (cache) {
    cache->input = Tensor({n, g.col_rows(), g.col_cols()});
    cache->aux = Tensor(x.shape());  // shape record only
    kernels::conv2d_forward(g, n, x.span(), weight_.value.span(), bias_.value.span(), y.span(),
                            cache->input.span());
  } else {
    kernels::conv2d_forward(g, n, x.span(), weight_.value.span(), bias_.value.span(), y.span());
  }
  return y;
}

Tensor Conv2d::backward(const LayerCache& cache, const Tensor& dy) {
  const Tensor& xshape = cache.aux;
  const auto g = geometry(xshape);
  const int n = xshape.dim(0);
  Tensor dx(xshape.shape());
  kernels::conv2d_backward_data(g, n, dy.span(), weight_.value.span(), dx.span());
  if (!weight_.frozen) {
    kernels::conv2d_backward_filter(g, n, dy.span(), cache.input.span(), weight_.grad.span(),
                                    bias_.grad.span());
  }
  return dx;
}

// --- ConvTranspose2d --------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride,
                                 int pad)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(pad),
      weight_({in_channels, out_channels, kernel, kernel}), bias_({out_channels}) {}

void ConvTranspose2d::init(Rng& rng) {
  he_normal(weight_.value,
            static_cast<double>(in_) * kernel_ * kernel_ / (stride_ * stride_), rng);
  bias_.value.fill(0.0f);
}

kernels::ConvGeometry ConvTranspose2d::geometry(const Tensor& x) const {
  require_rank(x, 4, "conv_transpose2d");
  if (x.dim(1) != in_) {
    throw ShapeError("conv_transpose2d: expected " + std::to_string(in_) +
                     " input channels, got " + shape_str(x.shape()));
  }
  const int oh = (x.dim(2) - 1) * stride_ - 2 * pad_ + kernel_;
  const int ow = (x.dim(3) - 1) * stride_ - 2 * pad_ + kernel_;
  kernels::ConvGeometry g{out_, in_, kernel_, stride_, pad_, oh, ow};
  if (g.out_h() != x.dim(2) || g.out_w() != x.dim(3)) {
    throw ShapeError("conv_transpose2d: geometry does not invert for " + shape_str(x.shape()));
  }
  return g;
}

Tensor ConvTranspose2d::forward(const Tensor& x, LayerCache* cache) const {
  const auto g = geometry(x);
  Tensor y({x.dim(0), out_, g.in_h, g.in_w});
  kernels::conv_transpose2d_forward(g, x.dim(0), x.span(), weight_.value.span(),
                                    bias_.value.span(), y.span());
  if (cache) cache->input = x;
  return y;
}

Tensor ConvTranspose2d::backward(const LayerCache& cache, const Tensor& dy) {
  const Tensor& x = cache.input;
  const auto g = geometry(x);
  Tensor dx(x.shape());
  if (weight_.frozen) {
    Tensor dw(weight_.value.shape()), db(bias_.value.shape());
    kernels::conv_transpose2d_backward(g, x.dim(0), x.span(), dy.span(), weight_.value.span(),
                                       dx.span(), dw.span(), db.span());
  } else {
    kernels::conv_transpose2d_backward(g, x.dim(0), x.span(), dy.span(), weight_.value.span(),
                                       dx.span(), weight_.grad.span(), bias_.grad.span());
  }
  return dx;
}

// --- Linear -----------------------------------------------------------------

Linear::Linear(int in_features, int out_features)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}),
      bias_({out_features}) {}

void Linear::init(Rng& rng) {
  // Glorot-uniform style bound keeps logits O(1) at init.
  const double bound = std::sqrt(6.0 / (in_ + out_));
  for (float& v : weight_.value.vec()) v = static_cast<float>(rng.uniform(-bound, bound));
  bias_.value.fill(0.0f);
}

void Linear::set_identity() {
  if (in_ != out_) throw ConfigError("identity init needs a square linear map");
  weight_.value.fill(0.0f);
  for (int c = 0; c < out_; ++c) weight_.value[static_cast<std::size_t>(c * in_ + c)] = 1.0f;
  bias_.value.fill(0.0f);
}

Tensor Linear::forward(const Tensor& x, LayerCache* cache) const {
  require_rank(x, 2, "linear");
  if (x.dim(1) != in_) {
    throw ShapeError("linear: expected " + std::to_string(in_) + " features, got " +
                     shape_str(x.shape()));
  }
  const int n = x.dim(0);
  Tensor y({n, out_});
  kernels::gemm(false, true, n, out_, in_, 1.0f, x.data(), weight_.value.data(), 0.0f, y.data());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_; ++j) y[static_cast<std::size_t>(i * out_ + j)] += bias_.value[j];
  if (cache) cache->input = x;
  return y;
}

Tensor Linear::backward(const LayerCache& cache, const Tensor& dy) {
  const Tensor& x = cache.input;
  const int n = x.dim(0);
  Tensor dx({n, in_});
  kernels::gemm(false, false, n, in_, out_, 1.0f, dy.data(), weight_.value.data(), 0.0f,
                dx.data());
  if (!weight_.frozen) {
    kernels::gemm(true, false, out_, in_, n, 1.0f, dy.data(), x.data(), 1.0f,
                  weight_.grad.data());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < out_; ++j)
        bias_.grad[static_cast<std::size_t>(j)] += dy[static_cast<std::size_t>(i * out_ + j)];
  }
  return dx;
}

// --- Relu / GlobalAvgPool ---------------------------------------------------

Tensor Relu::forward(const Tensor& x, LayerCache* cache) const {
  Tensor y = x;
  for (float& v : y.vec()) v = v > 0.0f ? v : 0.0f;
  if (cache) cache->aux = y;
  return y;
}

Tensor Relu::backward(const LayerCache& cache, const Tensor& dy) {
  Tensor dx = dy;
  const auto& out = cache.aux.vec();
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(out[i] > 0.0f)) dx[i] = 0.0f;
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, LayerCache* cache) const {
  require_rank(x, 4, "global_avg_pool");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int i = 0; i < n * c; ++i) {
    const float* p = x.data() + static_cast<std::size_t>(i) * plane;
    double acc = 0.0;
    for (std::size_t q = 0; q < plane; ++q) acc += p[q];
    y[static_cast<std::size_t>(i)] = static_cast<float>(acc / static_cast<double>(plane));
  }
  if (cache) cache->aux = Tensor(x.shape());
  return y;
}

Tensor GlobalAvgPool::backward(const LayerCache& cache, const Tensor& dy) {
  Tensor dx(cache.aux.shape());
  const std::size_t plane = static_cast<std::size_t>(dx.dim(2)) * dx.dim(3);
  const float inv = 1.0f / static_cast<float>(plane);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    float* p = dx.data() + i * plane;
    std::fill(p, p + plane, dy[i] * inv);
  }
  return dx;
}

// --- Sequential -------------------------------------------------------------

void Sequential::init(Rng& rng) {
  for (auto& l : layers_) std::visit([&](auto& layer) { layer.init(rng); }, l);
}

Tensor Sequential::forward(const Tensor& x, SequentialCache* cache) const {
  if (cache) cache->layers.assign(layers_.size(), {});
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerCache* lc = cache ? &cache->layers[i] : nullptr;
    h = std::visit([&](const auto& layer) { return layer.forward(h, lc); }, layers_[i]);
  }
  return h;
}

Tensor Sequential::backward(const SequentialCache& cache, const Tensor& dy) {
  if (cache.layers.size() != layers_.size()) {
    throw ShapeError("backward called without a matching training forward pass");
  }
  Tensor g = dy;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = std::visit([&](auto& layer) { return layer.backward(cache.layers[i], g); }, layers_[i]);
  }
  return g;
}

std::vector<NamedParam> Sequential::params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto ps = std::visit([](auto& layer) { return layer.params(); }, layers_[i]);
    for (auto& p : ps) out.push_back({std::to_string(i) + "." + p.name, p.param});
  }
  return out;
}

std::vector<ConstNamedParam> Sequential::params() const {
  std::vector<ConstNamedParam> out;
  for (auto& p : const_cast<Sequential*>(this)->params()) out.push_back({p.name, p.param});
  return out;
}

}  // namespace unirep
