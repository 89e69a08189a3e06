#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "fsmnet/error.hpp"

namespace fsmnet {

/// Cache-line aligned allocator. Vectorized reductions peel their first
/// elements based on the address, so a fixed base alignment keeps results
/// independent of heap layout.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// (batch, channel, height, width). Convolution weights reuse it as
/// (out_channels, in_channels, kernel_h, kernel_w).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Dense row-major NCHW array. Used for images, feature maps and parameters.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw InvalidInput("negative tensor extent " + shape.str());
    }
  }
  Tensor(Shape shape, AlignedVector<T> data) : shape_(shape), data_(std::move(data)) {
    check_size();
  }
  Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    check_size();
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] AlignedVector<T>& storage() { return data_; }
  [[nodiscard]] const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  [[nodiscard]] T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    AlignedVector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  void check_size() const {
    if (data_.size() != shape_.size()) {
      throw ShapeMismatch("tensor data has " + std::to_string(data_.size()) + " elements, shape " +
                          shape_.str() + " needs " + std::to_string(shape_.size()));
    }
  }

  Shape shape_{};
  AlignedVector<T> data_;
};

template <typename T>
[[nodiscard]] bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

template <typename T>
[[nodiscard]] double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeMismatch(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

}  // namespace fsmnet
