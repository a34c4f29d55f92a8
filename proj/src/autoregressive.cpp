#include "cmet/autoregressive.hpp"

#include <algorithm>
#include <numeric>

#include "cmet/error.hpp"

namespace cmet {

UniqueStates deduplicate(const std::vector<State>& samples) {
  std::vector<std::uint32_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return samples[a] < samples[b]; });
  UniqueStates u;
  u.of_sample.resize(samples.size());
  for (std::uint32_t k : order) {
    if (u.states.empty() || u.states.back() != samples[k]) {
      u.states.push_back(samples[k]);
      u.multiplicity.push_back(0.0);
    }
    u.of_sample[k] = static_cast<std::uint32_t>(u.states.size() - 1);
    u.multiplicity.back() += 1.0;
  }
  return u;
}

PrefixTrie PrefixTrie::build(const std::vector<State>& states) {
  PrefixTrie t;
  t.length = states.empty() ? 0 : states.front().size();
  t.levels.resize(t.length + 1);
  t.node.assign(t.length + 1, std::vector<std::uint32_t>(states.size(), 0));
  t.levels[0].parent.push_back(0);
  t.levels[0].token.push_back(0);
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (states[s].size() != t.length) throw Error(ErrorKind::ShapeMismatch, "states differ in length");
    if (s > 0 && !(states[s - 1] < states[s])) {
      throw Error(ErrorKind::InvalidArgument, "trie input must be sorted and distinct");
    }
  }
  // Sorted input: a new node at level i starts wherever the prefix of length
  // i differs from the previous state's.
  for (std::size_t i = 1; i <= t.length; ++i) {
    Level& lv = t.levels[i];
    for (std::size_t s = 0; s < states.size(); ++s) {
      const bool fresh = s == 0 || t.node[i - 1][s] != t.node[i - 1][s - 1] ||
                         states[s][i - 1] != states[s - 1][i - 1];
      if (fresh) {
        lv.parent.push_back(t.node[i - 1][s]);
        lv.token.push_back(static_cast<std::uint32_t>(states[s][i - 1]));
      }
      t.node[i][s] = static_cast<std::uint32_t>(lv.size() - 1);
    }
  }
  return t;
}

std::shared_ptr<const std::vector<std::uint8_t>> bound_mask(const std::vector<int>& bounds,
                                                            std::size_t vocab) {
  auto m = std::make_shared<std::vector<std::uint8_t>>(bounds.size() * vocab, 0);
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    for (std::size_t v = static_cast<std::size_t>(bounds[i]) + 1; v < vocab; ++v) (*m)[i * vocab + v] = 1;
  }
  return m;
}

}  // namespace cmet
