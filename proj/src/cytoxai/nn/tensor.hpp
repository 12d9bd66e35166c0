#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cytoxai::nn {

using Shape = std::vector<int>;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense float tensor. Image batches are NCHW, feature batches are (N, F).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);

  const Shape& shape() const { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Reallocates to `shape` and zero-fills.
  void reset(const Shape& shape);
  void fill(float value);
  // Elements per leading-axis slice.
  std::size_t stride0() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

}  // namespace cytoxai::nn
