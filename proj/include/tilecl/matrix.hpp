// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <string>

#include "tilecl/errors.hpp"
#include "tilecl/tracker.hpp"

namespace tilecl {

// Read-only window onto a contiguous run of rows of a row-major matrix.
// `first_row` is the window's offset inside the parent, kept so tiles know
// their global coordinates.
template <class T>
struct RowsView {
  const T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t first_row = 0;

  std::span<const T> row(std::size_t r) const noexcept {
    assert(r < rows);
    return {data + r * cols, cols};
  }

  RowsView sub(std::size_t first, std::size_t count) const noexcept {
    assert(first + count <= rows);
    return {data + first * cols, count, cols, first_row + first};
  }
};

// Dense row-major matrix with tracked storage.
template <class T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), storage_(rows * cols) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return storage_.size(); }
  bool empty() const noexcept { return storage_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return storage_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return storage_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {storage_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {storage_.data() + r * cols_, cols_};
  }

  std::span<T> values() noexcept { return storage_.span(); }
  std::span<const T> values() const noexcept { return storage_.span(); }
  T* data() noexcept { return storage_.data(); }
  const T* data() const noexcept { return storage_.data(); }

  RowsView<T> view() const noexcept { return {storage_.data(), rows_, cols_, 0}; }
  RowsView<T> view_rows(std::size_t first, std::size_t count) const noexcept {
    return view().sub(first, count);
  }

  void adopt_current_attribution() { storage_.adopt_current_attribution(); }
  void release_attribution() noexcept { storage_.release_attribution(); }
  std::size_t bytes() const noexcept { return storage_.bytes(); }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  TrackedBuffer<T> storage_;
};

inline std::string shape_string(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// Copy of rows [first, first+count) of `m`, charged to the current scope.
template <class T>
Matrix<T> copy_rows(const Matrix<T>& m, std::size_t first, std::size_t count) {
  Matrix<T> out(count, m.cols());
  auto src = m.values().subspan(first * m.cols(), count * m.cols());
  std::copy(src.begin(), src.end(), out.values().begin());
  return out;
}

template <class To, class From>
Matrix<To> cast_matrix(const Matrix<From>& m) {
  Matrix<To> out(m.rows(), m.cols());
  auto src = m.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  return out;
}

}  // namespace tilecl
