#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cmet::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major block of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  /// Size of the last axis (1 for scalars).
  std::size_t last_dim() const noexcept { return shape.empty() ? 1 : shape.back(); }
  /// Number of rows when viewed as [rows, last_dim].
  std::size_t rows() const noexcept { return data.size() / (last_dim() == 0 ? 1 : last_dim()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double item() const;
};

}  // namespace cmet::diff
