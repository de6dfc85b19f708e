#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace noah {

// Rank-4 activation tensor laid out [batch, height, width, channels] with the
// channel index fastest, so the channel vector of one pixel is contiguous.
// Storage is 32-bit; reductions over tensors accumulate in 64-bit.
class Tensor {
 public:
  Tensor() : Tensor(1, 1, 1, 1) {}
  Tensor(int batch, int height, int width, int channels);

  static Tensor full(int batch, int height, int width, int channels, float value);

  int batch() const { return batch_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  float& at(int b, int i, int j, int c) {
    return data_[offset(b, i, j, c)];
  }
  const float& at(int b, int i, int j, int c) const {
    return data_[offset(b, i, j, c)];
  }

  // Flat index of (b, i, j, 0); the C channel values follow contiguously.
  std::size_t pixel_offset(int b, int i, int j) const {
    return offset(b, i, j, 0);
  }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  bool same_shape(const Tensor& other) const {
    return dims() == other.dims();
  }
  std::array<int, 4> dims() const { return {batch_, height_, width_, channels_}; }
  std::string shape_str() const;

 private:
  std::size_t offset(int b, int i, int j, int c) const {
    return ((static_cast<std::size_t>(b) * height_ + i) * width_ + j) * channels_ + c;
  }

  int batch_, height_, width_, channels_;
  std::vector<float> data_;
};

// Dense 2-D float array, row-major. Used for embedding weights (rows = input
// channels, cols = categories) and for per-batch logits (rows = batch).
class Matrix {
 public:
  Matrix() : Matrix(1, 1) {}
  Matrix(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const float& at(int r, int c) const {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  std::string shape_str() const;

 private:
  int rows_, cols_;
  std::vector<float> data_;
};

// One gradient array per learnable parameter, keyed by the parameter's path
// (for example "head.block0.key_weight"). Extents always mirror the parameter.
class GradientSet {
 public:
  struct Entry {
    std::vector<int> extents;
    std::vector<float> values;
  };

  // Throws if the path is already present.
  void add(const std::string& path, std::vector<int> extents, std::vector<float> values);
  bool contains(const std::string& path) const { return entries_.count(path) != 0; }
  const Entry& at(const std::string& path) const;
  Entry& at(const std::string& path);

  const std::map<std::string, Entry>& entries() const { return entries_; }
  bool finite() const;

 private:
  std::map<std::string, Entry> entries_;
};

bool is_finite(std::span<const float> values);
bool is_finite(const Tensor& t);

// When enabled (the test binaries turn it on), every public op asserts that
// its result is free of NaN/Inf and throws Error otherwise. Off by default so
// production forward passes don't pay the scan.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

namespace detail {
void check_finite(std::span<const float> values, const char* what);
void check_finite(const Tensor& t, const char* what);
}  // namespace detail

}  // namespace noah
