#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "pcn/error.hpp"

namespace pcn {

/// Extent of a dense tensor, rank 1 to 4.
struct Shape {
  std::array<int, 4> dims{};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> extents) {
    if (extents.size() == 0 || extents.size() > 4) {
      fail(ErrorKind::shape, "rank must be in [1, 4]");
    }
    for (int e : extents) {
      if (e <= 0) fail(ErrorKind::shape, "extents must be positive");
      dims[static_cast<std::size_t>(rank++)] = e;
    }
  }

  int operator[](int axis) const { return dims[static_cast<std::size_t>(axis)]; }

  std::size_t numel() const {
    if (rank == 0) return 0;
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) n *= static_cast<std::size_t>(dims[static_cast<std::size_t>(i)]);
    return n;
  }

  bool operator==(const Shape& other) const {
    if (rank != other.rank) return false;
    for (int i = 0; i < rank; ++i) {
      if (dims[static_cast<std::size_t>(i)] != other.dims[static_cast<std::size_t>(i)]) return false;
    }
    return true;
  }
};

inline std::string to_string(const Shape& s) {
  std::string out = "(";
  for (int i = 0; i < s.rank; ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Storage on 64-byte boundaries. Vectorized kernels peel differently depending on where a
/// buffer starts, so a fixed alignment keeps floating-point results independent of the heap.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array; innermost axis is width. Layout for feature maps is (C, H, W).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::span<const T> data) : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.numel()) {
      fail(ErrorKind::shape, "data length does not match " + to_string(shape_));
    }
  }
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(shape, std::span<const T>(data)) {}
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(shape, std::span<const T>(data.begin(), data.size())) {}

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return shape_.rank; }
  int dim(int axis) const { return shape_[axis]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  void reshape(Shape s) {
    if (s.numel() != data_.size()) {
      fail(ErrorKind::shape, "cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    shape_ = s;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

}  // namespace pcn
