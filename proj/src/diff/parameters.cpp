#include "cmet/diff/parameters.hpp"

#include <cmath>

#include "cmet/error.hpp"

namespace cmet::diff {

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw Error(ErrorKind::InvalidArgument, "duplicate parameter '" + name + "'");
  Parameter p;
  p.name = name;
  p.grad = Tensor(init.shape, 0.0);
  p.first_moment = Tensor(init.shape, 0.0);
  p.second_moment = Tensor(init.shape, 0.0);
  p.value = std::move(init);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "no parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "no parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::element_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Parameter& p : params_) {
    if (p.grad.shape != p.value.shape) p.grad = Tensor(p.value.shape, 0.0);
    std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
  }
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.params_.size() != params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "parameter stores differ in size");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Parameter& src = other.params_[i];
    if (src.name != params_[i].name || src.value.shape != params_[i].value.shape) {
      throw Error(ErrorKind::ShapeMismatch, "parameter '" + src.name + "' does not match '" +
                                                params_[i].name + "'");
    }
    params_[i].value = src.value;
  }
}

double ParameterStore::grad_norm() const {
  double s = 0.0;
  for (const Parameter& p : params_) {
    for (double g : p.grad.data) s += g * g;
  }
  return std::sqrt(s);
}

}  // namespace cmet::diff
