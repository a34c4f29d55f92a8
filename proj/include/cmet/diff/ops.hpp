#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cmet/diff/tape.hpp"

namespace cmet::diff {

// Shapes are checked eagerly; violations throw Error(ShapeMismatch).
// "Last axis" ops treat a tensor as [rows, last_dim].

Var matmul(Var a, Var b);                // [m,k] x [k,n]
Var bmm(Var a, Var b);                   // [B,m,k] x [B,k,n]
Var bmm_nt(Var a, Var b);                // [B,m,k] x [B,n,k]^T
Var linear(Var x, Var weight, Var bias);  // [..,in] x [in,out] + [out]

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_bias(Var a, Var bias);           // bias broadcast over rows
Var scale(Var a, double factor);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var gelu(Var a);                         // tanh approximation

Var softmax(Var a);                      // last axis
Var log_softmax(Var a);                  // last axis
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

/// Rows of `table` ([V, d]) selected by `indices`; result [len, d].
Var embedding(Var table, std::span<const std::uint32_t> indices);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& axes);

/// Replaces entries where mask != 0 by `value`. The mask covers the trailing
/// mask->size() elements and repeats over the leading ones.
Var masked_fill(Var a, std::shared_ptr<const std::vector<std::uint8_t>> mask, double value);

/// out[r] = a[r, index[r]] for a of shape [R, V].
Var gather_log_prob(Var a, std::span<const std::uint32_t> index);

/// Sum of weights * a over entries with non-zero weight (so -inf entries with
/// zero weight never produce NaN).
Var weighted_sum(Var a, std::shared_ptr<const Tensor> weights);
Var sum(Var a);
Var mean(Var a);

}  // namespace cmet::diff
