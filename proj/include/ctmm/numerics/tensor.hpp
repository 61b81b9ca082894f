#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctmm::num {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);

/// Dense row-major tensor of doubles. Graph operations work on rank-2 tensors;
/// a rank-1 tensor of length n is treated as a 1 x n row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<double> v) {
    return Tensor({r, c}, std::vector<double>(v));
  }
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  /// Bitwise equality of shape and values (NaN payloads included).
  bool bit_equal(const Tensor& o) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace ctmm::num
