// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// Dense row-major containers used throughout the library.
//
//   Matrix<T>  rows x cols, element (r, c) at r * cols + c
//   Volume<T>  d0 x d1 x d2, element (i, j, k) at (i * d1 + j) * d2 + k
//
// A 2D feature map of H x W pixels with C channels is a Volume with
// (d0, d1, d2) = (H, W, C): pixel (i, j) occupies the contiguous channel
// run starting at (i * W + j) * C.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scanstereo/errors.hpp"

namespace scanstereo {

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: payload size does not match rows * cols");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T{})
      : d0_(d0), d1_(d1), d2_(d2), data_(d0 * d1 * d2, fill) {}

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d1_ + j) * d2_ + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d1_ + j) * d2_ + k];
  }

  /// Contiguous last-axis run at (i, j).
  std::span<T> fiber(std::size_t i, std::size_t j) {
    return {data_.data() + (i * d1_ + j) * d2_, d2_};
  }
  std::span<const T> fiber(std::size_t i, std::size_t j) const {
    return {data_.data() + (i * d1_ + j) * d2_, d2_};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(const Volume& o) const {
    return d0_ == o.d0_ && d1_ == o.d1_ && d2_ == o.d2_;
  }
  bool operator==(const Volume&) const = default;

 private:
  std::size_t d0_ = 0;
  std::size_t d1_ = 0;
  std::size_t d2_ = 0;
  std::vector<T> data_;
};

/// H x W x C feature map, row-major over pixels, channels innermost.
using FeatureMap2D = Volume<double>;

/// H x W x 3 image with intensities in [0, 1].
using Image = Volume<double>;

}  // namespace scanstereo
