#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace pdcycon {

/// Dense row-major matrix.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows && c < cols);
    return values[r * cols + c];
  }
  const T& operator()(std::size_t r, std::size_t c) const {
    assert(r < rows && c < cols);
    return values[r * cols + c];
  }

  T* row(std::size_t r) { return values.data() + r * cols; }
  const T* row(std::size_t r) const { return values.data() + r * cols; }

  bool operator==(const Matrix&) const = default;
};

}  // namespace pdcycon
