#pragma once

#include <cstddef>
#include <string>

#include "cmet/diff/parameters.hpp"

namespace cmet::diff {

enum class DecayLaw { Constant, InverseSqrt };

DecayLaw parse_decay_law(const std::string& name);
const char* to_string(DecayLaw law);

/// Linear warmup to base_lr over warmup_steps, then the decay law. With
/// s = step + 1 and w = max(warmup_steps, 1), inverse-sqrt gives
/// base_lr * min(s / w, sqrt(w / s)), continuous at s = w.
struct Schedule {
  double base_lr = 1e-3;
  std::size_t warmup_steps = 0;
  DecayLaw law = DecayLaw::InverseSqrt;

  double operator()(std::size_t step) const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One decoupled-weight-decay Adam update at lr = schedule(store.step);
/// increments store.step. Returns the learning rate used.
double adamw_step(ParameterStore& store, const Schedule& schedule, const AdamWConfig& cfg = {});

/// Rescales gradients so their global L2 norm is at most max_norm. Returns the
/// norm before clipping.
double clip_grad_norm(ParameterStore& store, double max_norm);

}  // namespace cmet::diff
