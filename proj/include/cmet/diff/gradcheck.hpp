#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmet/diff/parameters.hpp"
#include "cmet/diff/tape.hpp"

namespace cmet::diff {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;  // parameter elements compared
  std::string worst;        // "param[index]" of the largest relative error

  bool passed(double tol) const { return max_rel_error < tol; }
};

/// Builds a scalar on a fresh tape from the parameters in the store.
using ScalarFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;  // central-difference step
  /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-3;
  /// Elements compared per parameter (chosen at random); 0 compares all.
  std::size_t max_per_param = 0;
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of f against central differences.
GradCheckReport check_gradients(const std::string& name, ParameterStore& store, const ScalarFn& f,
                                const GradCheckOptions& options = {});

/// One small randomized check per differentiable op.
std::vector<GradCheckReport> check_all_ops(std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace cmet::diff
