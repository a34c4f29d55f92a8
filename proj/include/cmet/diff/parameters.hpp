#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "cmet/diff/tensor.hpp"

namespace cmet::diff {

/// A trainable tensor with its gradient slot and AdamW moments.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor first_moment;
  Tensor second_moment;
};

/// Named trainables in registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t element_count() const;
  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }

  void zero_grad();
  /// Copies values only (moments and gradients untouched).
  void copy_values_from(const ParameterStore& other);
  double grad_norm() const;

  /// Adam step counter, persisted with checkpoints.
  std::size_t step = 0;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cmet::diff
