#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>

#include "cmet/diff/parameters.hpp"
#include "cmet/diff/tensor.hpp"

namespace cmet::diff {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid topological order for the pullbacks.
/// A tape belongs to one thread.
class Tape {
 public:
  /// Propagates the node's output gradient into its inputs' gradients.
  using Pullback = std::function<void(Tape&, std::uint32_t self)>;

  /// With record_gradients=false no pullbacks are stored (inference mode).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a trainable; backward() accumulates into p.grad. Repeated
  /// calls for the same parameter return the same leaf.
  Var param(Parameter& p);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Records an op result. `pullback` is kept only when recording and some
  /// input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Pullback pullback);
  Var record(Tensor value, const std::vector<Var>& inputs, Pullback pullback);

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor& grad(std::uint32_t id);
  Tensor& grad(Var v) { return grad(v.id()); }

  /// Seeds d(loss)/d(loss) = 1, runs every pullback in reverse order, adds
  /// leaf gradients into their parameters and clears the tape. Throws
  /// DisconnectedGraph if no parameter influences the loss.
  void backward(Var loss);

  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Pullback pullback;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  template <class It>
  Var record_impl(Tensor value, It first, It last, Pullback pullback);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> leaves_;
  bool recording_;
};

}  // namespace cmet::diff
