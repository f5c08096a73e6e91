#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "wavecc/error.hpp"

namespace wavecc {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. 4D tensors use the channels-first layout
/// [batch, channel, height, width].
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_)) {
      fail(ErrorKind::kShape, "tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      fail(ErrorKind::kShape, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    fail(ErrorKind::kShape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(shape));
  }
}

}  // namespace wavecc
