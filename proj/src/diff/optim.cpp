#include "cmet/diff/optim.hpp"

#include <algorithm>
#include <cmath>

#include "cmet/error.hpp"

namespace cmet::diff {

DecayLaw parse_decay_law(const std::string& name) {
  if (name == "constant") return DecayLaw::Constant;
  if (name == "inverse_sqrt") return DecayLaw::InverseSqrt;
  throw Error(ErrorKind::InvalidArgument, "unknown decay law '" + name + "'");
}

const char* to_string(DecayLaw law) {
  return law == DecayLaw::Constant ? "constant" : "inverse_sqrt";
}

double Schedule::operator()(std::size_t step) const {
  const double s = static_cast<double>(step) + 1.0;
  const double w = static_cast<double>(std::max<std::size_t>(warmup_steps, 1));
  const double ramp = std::min(1.0, s / w);
  if (law == DecayLaw::Constant) return base_lr * ramp;
  return base_lr * std::min(ramp, std::sqrt(w / s));
}

double adamw_step(ParameterStore& store, const Schedule& schedule, const AdamWConfig& cfg) {
  const double lr = schedule(store.step);
  ++store.step;
  const double t = static_cast<double>(store.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (Parameter& p : store.all()) {
    if (p.grad.size() != p.value.size()) continue;
    if (p.first_moment.size() != p.value.size()) p.first_moment = Tensor(p.value.shape, 0.0);
    if (p.second_moment.size() != p.value.size()) p.second_moment = Tensor(p.value.shape, 0.0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      double& m = p.first_moment.data[i];
      double& v = p.second_moment.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / c1;
      const double vhat = v / c2;
      p.value.data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.value.data[i]);
    }
  }
  return lr;
}

double clip_grad_norm(ParameterStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (Parameter& p : store.all()) {
      for (double& g : p.grad.data) g *= f;
    }
  }
  return norm;
}

}  // namespace cmet::diff
