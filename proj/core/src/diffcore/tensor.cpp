#include "danp/diffcore/tensor.hpp"

#include <cmath>

#include "danp/error.hpp"

namespace danp::diffcore {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw ContractError("tensor extents must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ContractError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor", shape_string(shape_), "data[" + std::to_string(data_.size()) + "]");
  }
}

float Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape", shape_string(shape_), shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
  // x - x is 0 for finite x and NaN otherwise; the sum stays 0 iff all are finite.
  float acc = 0.0f;
  for (float v : data_) acc += v - v;
  return acc == 0.0f;
}

}  // namespace danp::diffcore
