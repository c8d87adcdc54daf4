#pragma once

// Weight-tensor data model and the filter-as-data-point reshaping.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "epruner/error.hpp"

namespace epruner {

/// Shape of a convolution weight: (c_out, c_in, kernel_h, kernel_w).
struct Shape4 {
  std::size_t out = 1;
  std::size_t in = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] constexpr std::size_t size() const noexcept { return out * in * h * w; }
  [[nodiscard]] constexpr std::size_t filter_size() const noexcept { return in * h * w; }
  [[nodiscard]] constexpr std::size_t kernel_area() const noexcept { return h * w; }

  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.out) + "," + std::to_string(s.in) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

/// A 4-D weight tensor stored row-major in (out, in, h, w) order.
class WeightTensor4D {
 public:
  WeightTensor4D() = default;

  WeightTensor4D(std::string name, Shape4 shape, std::vector<double> data)
      : name_(std::move(name)), shape_(shape), data_(std::move(data)) {
    if (shape_.out == 0 || shape_.in == 0 || shape_.h == 0 || shape_.w == 0) {
      throw DimensionError("tensor '" + name_ + "': every dimension must be >= 1, got " + to_string(shape_));
    }
    if (data_.size() != shape_.size()) {
      throw DimensionError("tensor '" + name_ + "': shape " + to_string(shape_) + " needs " +
                           std::to_string(shape_.size()) + " values, got " + std::to_string(data_.size()));
    }
  }

  /// Zero-filled tensor of the given shape.
  static WeightTensor4D zeros(std::string name, Shape4 shape) {
    return {std::move(name), shape, std::vector<double>(shape.size(), 0.0)};
  }

  [[nodiscard]] const std::string& name() const noexcept { return name_; }
  [[nodiscard]] const Shape4& shape() const noexcept { return shape_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<double> data() noexcept { return data_; }

  [[nodiscard]] std::size_t index(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const noexcept {
    return ((o * shape_.in + i) * shape_.h + y) * shape_.w + x;
  }
  [[nodiscard]] double at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const noexcept {
    return data_[index(o, i, y, x)];
  }
  double& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) noexcept { return data_[index(o, i, y, x)]; }

  /// All values belonging to output filter `o`.
  [[nodiscard]] std::span<const double> filter(std::size_t o) const noexcept {
    return std::span<const double>(data_).subspan(o * shape_.filter_size(), shape_.filter_size());
  }

  friend bool operator==(const WeightTensor4D&, const WeightTensor4D&) = default;

 private:
  std::string name_;
  Shape4 shape_{};
  std::vector<double> data_;
};

/// One layer's filters laid out as rows of a dense row-major matrix. When the
/// layer has a bias, the bias of filter i is the last entry of row i.
class FilterMatrix {
 public:
  FilterMatrix() = default;

  FilterMatrix(std::size_t rows, std::size_t cols, bool has_bias, std::vector<double> data)
      : rows_(rows), cols_(cols), has_bias_(has_bias), data_(std::move(data)) {
    if (rows_ == 0 || cols_ == 0) throw DimensionError("filter matrix needs at least one row and one column");
    if (has_bias_ && cols_ < 2) throw DimensionError("filter matrix with bias needs at least two columns");
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("filter matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                           std::to_string(rows_ * cols_) + " values, got " + std::to_string(data_.size()));
    }
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] bool has_bias() const noexcept { return has_bias_; }
  [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  friend bool operator==(const FilterMatrix&, const FilterMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  bool has_bias_ = false;
  std::vector<double> data_;
};

/// Reshapes a (c_out, c_in, h, w) tensor into a c_out x (c_in*h*w [+1]) matrix.
inline FilterMatrix flatten(const WeightTensor4D& t, std::optional<std::span<const double>> bias = std::nullopt) {
  const Shape4& s = t.shape();
  if (bias && bias->size() != s.out) {
    throw DimensionError("tensor '" + t.name() + "': bias has " + std::to_string(bias->size()) +
                         " entries, expected " + std::to_string(s.out));
  }
  const std::size_t fsize = s.filter_size();
  const std::size_t cols = fsize + (bias ? 1 : 0);
  std::vector<double> out;
  out.reserve(s.out * cols);
  for (std::size_t o = 0; o < s.out; ++o) {
    auto f = t.filter(o);
    out.insert(out.end(), f.begin(), f.end());
    if (bias) out.push_back((*bias)[o]);
  }
  return {s.out, cols, bias.has_value(), std::move(out)};
}

/// Inverse of flatten(). Returns the tensor and, when the matrix carries a
/// bias column, the bias vector.
inline std::pair<WeightTensor4D, std::optional<std::vector<double>>> unflatten(const FilterMatrix& m, Shape4 target,
                                                                               std::string name = {}) {
  const std::size_t fsize = target.filter_size();
  const std::size_t want_cols = fsize + (m.has_bias() ? 1 : 0);
  if (m.rows() != target.out || m.cols() != want_cols) {
    throw DimensionError("cannot unflatten " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         " matrix into shape " + to_string(target) + (m.has_bias() ? " with bias" : ""));
  }
  std::vector<double> data;
  data.reserve(target.size());
  std::optional<std::vector<double>> bias;
  if (m.has_bias()) bias.emplace().reserve(m.rows());
  for (std::size_t o = 0; o < m.rows(); ++o) {
    auto r = m.row(o);
    data.insert(data.end(), r.begin(), r.begin() + static_cast<std::ptrdiff_t>(fsize));
    if (bias) bias->push_back(r.back());
  }
  return {WeightTensor4D(std::move(name), target, std::move(data)), std::move(bias)};
}

}  // namespace epruner
