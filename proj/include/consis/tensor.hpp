#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "consis/error.hpp"

namespace consis {

// Dense row-major tensor. Shape is dynamic; hot kernels work on raw pointers
// and treat this as storage plus bookkeeping.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel(shape), T{}) {}

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // [b, c, y, x] for rank-4 tensors.
  T& at4(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at4(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at2(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (const T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), ErrorCode::shape_mismatch, "max_abs_diff shapes");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace consis
