#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dibm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 tensor. Most of the library works with rank-2
/// [rows, cols] tensors; rank-1 tensors are treated as a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }
  static Tensor row(std::span<const float> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Rank-2 view: rank-1 tensors are one row.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::span<float> row_span(std::size_t r) noexcept;
  std::span<const float> row_span(std::size_t r) const noexcept;

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  float at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  float item() const;  // single-element tensors only
  void fill(float v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Throws NumericError naming `what` when any entry is NaN/Inf.
void require_finite(const Tensor& t, const char* what);

}  // namespace dibm
