#include "cmet/diff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "cmet/error.hpp"

namespace cmet::diff {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
  if (const auto it = leaves_.find(&p); it != leaves_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, {}, recording_ ? &p : nullptr, recording_});
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  leaves_.emplace(&p, id);
  return Var(this, id);
}

template <class It>
Var Tape::record_impl(Tensor value, It first, It last, Pullback pullback) {
  bool needs = false;
  if (recording_) {
    for (It it = first; it != last; ++it) {
      if (&it->tape() != this) throw Error(ErrorKind::InvalidArgument, "op mixes tapes");
      needs = needs || nodes_[it->id()].needs_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(pullback) : Pullback{}, nullptr, needs});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Pullback pullback) {
  return record_impl(std::move(value), inputs.begin(), inputs.end(), std::move(pullback));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, Pullback pullback) {
  return record_impl(std::move(value), inputs.begin(), inputs.end(), std::move(pullback));
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.data.size() != n.value.data.size() || n.grad.shape != n.value.shape) {
    n.grad = Tensor(n.value.shape, 0.0);
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error(ErrorKind::InvalidArgument, "loss from another tape");
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw Error(ErrorKind::ShapeMismatch, "backward needs a scalar loss, got " + shape_string(root.value.shape));
  }
  if (!root.needs_grad) {
    throw Error(ErrorKind::DisconnectedGraph, "loss does not depend on any parameter");
  }
  grad(loss.id()).data[0] = 1.0;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.pullback) {
      n.pullback(*this, id);
    } else if (n.param != nullptr) {
      Tensor& g = n.param->grad;
      if (g.shape != n.param->value.shape) g = Tensor(n.param->value.shape, 0.0);
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
}

}  // namespace cmet::diff
