#include "cmet/diff/tensor.hpp"

#include <sstream>

#include "cmet/error.hpp"

namespace cmet::diff {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw Error(ErrorKind::ShapeMismatch, "tensor data length " + std::to_string(data.size()) +
                                              " does not match shape " + shape_string(shape));
  }
}

double Tensor::item() const {
  if (data.size() != 1) throw Error(ErrorKind::ShapeMismatch, "item() on non-scalar " + shape_string(shape));
  return data[0];
}

}  // namespace cmet::diff
