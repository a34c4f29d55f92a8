#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "cmet/diff/tensor.hpp"
#include "cmet/model.hpp"

namespace cmet {

/// Distinct states of a sample batch in lexicographic order, with the map
/// from each sample to its distinct state.
struct UniqueStates {
  std::vector<State> states;
  std::vector<std::uint32_t> of_sample;
  std::vector<double> multiplicity;
};

UniqueStates deduplicate(const std::vector<State>& samples);

/// Prefix tree over a set of equal-length states. Level i holds the distinct
/// prefixes x_<i (level 0 is the empty prefix), each node knowing its parent at
/// level i-1 and the token that extends it. Evaluating a model once per node
/// instead of once per sample is exact and often much cheaper.
struct PrefixTrie {
  struct Level {
    std::vector<std::uint32_t> parent;
    std::vector<std::uint32_t> token;
    std::size_t size() const { return parent.size(); }
  };

  std::size_t length = 0;
  std::vector<Level> levels;                     // length + 1 levels
  std::vector<std::vector<std::uint32_t>> node;  // node[i][s]: level-i node of state s

  /// States must be sorted lexicographically and distinct (see deduplicate).
  static PrefixTrie build(const std::vector<State>& states);
};

/// Vocabulary mask for species i: entries above bounds[i] are excluded.
/// Layout [N * vocab], row i for species i.
std::shared_ptr<const std::vector<std::uint8_t>> bound_mask(const std::vector<int>& bounds,
                                                            std::size_t vocab);

}  // namespace cmet
