#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace unirep {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major float32 array. Activations are laid out NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> span() noexcept { return data_; }
  std::span<const float> span() const noexcept { return data_; }
  std::vector<float>& vec() noexcept { return data_; }
  const std::vector<float>& vec() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Elements per leading index (product of all but the first dimension).
  std::size_t row_size() const;

  void fill(float v);
  void reshape(Shape s);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(float s);

  /// Rows (leading-dimension slices) at the given indices.
  Tensor gather_rows(std::span<const int> rows) const;
  /// this[rows[i]] += src[i]
  void scatter_add_rows(std::span<const int> rows, const Tensor& src);

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

std::vector<double> to_double(const Tensor& t);
Tensor from_double(const Shape& s, std::span<const double> v);

}  // namespace unirep
