#include "noah/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "noah/error.hpp"

namespace noah {

namespace {

std::string shape_text(std::span<const int> dims) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << ',';
    out << dims[i];
  }
  out << ']';
  return out.str();
}

std::atomic<bool> g_finite_checks{false};

}  // namespace

Tensor::Tensor(int batch, int height, int width, int channels)
    : batch_(batch), height_(height), width_(width), channels_(channels) {
  if (batch < 1 || height < 1 || width < 1 || channels < 1) {
    const int dims[] = {batch, height, width, channels};
    throw ShapeError("tensor extents must be positive, got " + shape_text(dims));
  }
  data_.assign(static_cast<std::size_t>(batch) * height * width * channels, 0.0f);
}

Tensor Tensor::full(int batch, int height, int width, int channels, float value) {
  Tensor t(batch, height, width, channels);
  for (float& v : t.data_) v = value;
  return t;
}

std::string Tensor::shape_str() const {
  const int dims[] = {batch_, height_, width_, channels_};
  return shape_text(dims);
}

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) {
    const int dims[] = {rows, cols};
    throw ShapeError("matrix extents must be positive, got " + shape_text(dims));
  }
  data_.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
}

std::string Matrix::shape_str() const {
  const int dims[] = {rows_, cols_};
  return shape_text(dims);
}

void GradientSet::add(const std::string& path, std::vector<int> extents,
                      std::vector<float> values) {
  std::size_t expected = 1;
  for (int e : extents) expected *= static_cast<std::size_t>(e);
  if (expected != values.size()) {
    throw ShapeError("gradient '" + path + "': extents " + shape_text(extents) +
                     " do not cover " + std::to_string(values.size()) + " values");
  }
  auto [it, inserted] = entries_.emplace(path, Entry{std::move(extents), std::move(values)});
  (void)it;
  if (!inserted) throw Error("duplicate gradient entry '" + path + "'");
}

const GradientSet::Entry& GradientSet::at(const std::string& path) const {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw Error("no gradient entry '" + path + "'");
  return it->second;
}

GradientSet::Entry& GradientSet::at(const std::string& path) {
  auto it = entries_.find(path);
  if (it == entries_.end()) throw Error("no gradient entry '" + path + "'");
  return it->second;
}

bool GradientSet::finite() const {
  for (const auto& [path, entry] : entries_) {
    if (!is_finite(entry.values)) return false;
  }
  return true;
}

bool is_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool is_finite(const Tensor& t) { return is_finite(t.values()); }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

namespace detail {

void check_finite(std::span<const float> values, const char* what) {
  if (!finite_checks_enabled()) return;
  if (!is_finite(values)) {
    throw Error(std::string(what) + ": non-finite value in result");
  }
}

void check_finite(const Tensor& t, const char* what) { check_finite(t.values(), what); }

}  // namespace detail

}  // namespace noah
