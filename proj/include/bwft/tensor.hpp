#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bwft {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. Batched activations are laid out
/// [batch, height, width, channels] or [batch, features].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Same element count, new extents.
  void reshape(Shape shape);
  void fill(float value);
  bool all_finite() const;

  /// Bitwise equality of shape and data.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace bwft
