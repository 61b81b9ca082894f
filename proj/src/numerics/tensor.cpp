#include "ctmm/numerics/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace ctmm::num {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

static std::size_t shape_product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 2) return shape_[0];
  if (shape_.size() == 1) return 1;
  if (shape_.empty()) return 0;
  throw ShapeError("tensor: rank " + std::to_string(shape_.size()) + " has no row view");
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  if (shape_.empty()) return 0;
  throw ShapeError("tensor: rank " + std::to_string(shape_.size()) + " has no column view");
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::bit_equal(const Tensor& o) const {
  return shape_ == o.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0);
}

}  // namespace ctmm::num
