#include "unirep/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "unirep/errors.hpp"

namespace unirep {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("buffer of " + std::to_string(data_.size()) +
                     " elements does not match shape " + shape_str(shape_));
  }
}

std::size_t Tensor::row_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return data_.size() / static_cast<std::size_t>(shape_[0]);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(Shape s) {
  if (shape_numel(s) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  }
  shape_ = std::move(s);
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(float s) {
  for (float& v : data_) v *= s;
  return *this;
}

Tensor Tensor::gather_rows(std::span<const int> rows) const {
  Shape s = shape_;
  s.at(0) = static_cast<int>(rows.size());
  Tensor out(s);
  const std::size_t rs = row_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * rs), rs,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * rs));
  }
  return out;
}

void Tensor::scatter_add_rows(std::span<const int> rows, const Tensor& src) {
  const std::size_t rs = row_size();
  if (src.row_size() != rs || static_cast<std::size_t>(src.dim(0)) != rows.size()) {
    throw ShapeError("scatter_add_rows: " + shape_str(src.shape()) + " into " +
                     shape_str(shape_));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    float* dst = data_.data() + rows[i] * rs;
    const float* s = src.data() + i * rs;
    for (std::size_t j = 0; j < rs; ++j) dst[j] += s[j];
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

std::vector<double> to_double(const Tensor& t) {
  return std::vector<double>(t.vec().begin(), t.vec().end());
}

Tensor from_double(const Shape& s, std::span<const double> v) {
  std::vector<float> f(v.size());
  std::transform(v.begin(), v.end(), f.begin(), [](double x) { return static_cast<float>(x); });
  return Tensor(s, std::move(f));
}

}  // namespace unirep
