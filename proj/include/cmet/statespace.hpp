#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmet/model.hpp"

namespace cmet {

/// Box [0, U_0] x ... x [0, U_{N-1}] enumerated in mixed radix, species 0
/// varying fastest.
class TruncatedStateSpace {
 public:
  explicit TruncatedStateSpace(std::vector<int> bounds);

  std::size_t size() const noexcept { return size_; }
  std::size_t dimension() const noexcept { return bounds_.size(); }
  const std::vector<int>& bounds() const noexcept { return bounds_; }

  std::size_t encode(std::span<const int> x) const;
  State decode(std::size_t index) const;
  void decode_into(std::size_t index, std::span<int> out) const;
  bool contains(std::span<const int> x) const;

 private:
  std::vector<int> bounds_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 1;
};

/// Default cap on enumerated states for the exact path.
inline constexpr std::size_t kDefaultStateCap = std::size_t{1} << 24;

/// Sparse transition-rate operator stored by column: entry (row, value) in
/// column mu is the rate of flow from state mu into state row. The diagonal is
/// kept separately and equals minus the column's off-diagonal sum.
class GeneratorMatrix {
 public:
  GeneratorMatrix() = default;

  std::size_t dimension() const noexcept { return diagonal_.size(); }
  std::size_t nonzeros() const noexcept { return rows_.size() + diagonal_.size(); }
  const std::vector<double>& diagonal() const noexcept { return diagonal_; }
  double max_exit_rate() const;

  /// out = T * in
  void multiply(std::span<const double> in, std::span<double> out) const;
  double entry(std::size_t row, std::size_t col) const;
  double column_sum(std::size_t col) const;
  std::vector<double> to_dense() const;  // row-major, tests only

 private:
  friend GeneratorMatrix build_generator(const ReactionNetwork&, const RateMap&,
                                         const TruncatedStateSpace&, std::size_t);
  std::vector<std::size_t> col_start_;
  std::vector<std::uint32_t> rows_;
  std::vector<double> values_;
  std::vector<double> diagonal_;
};

/// Generator under reflecting truncation: jumps that would leave the box are
/// dropped, so every column sums to zero. Throws SpaceTooLarge above `cap`.
GeneratorMatrix build_generator(const ReactionNetwork& net, const RateMap& rates,
                                const TruncatedStateSpace& space,
                                std::size_t cap = kDefaultStateCap);

struct ProbabilityVector {
  std::vector<double> p;
  double time = 0.0;

  double total() const;
};

ProbabilityVector delta_distribution(const TruncatedStateSpace& space, std::span<const int> x,
                                     double time = 0.0);

/// p(t) = exp(t T) p0 by uniformization. The horizon is split so each
/// segment has q*dt <= 32, and each Poisson series is summed until its
/// remaining weight is below 1e-15.
ProbabilityVector evolve_exact(const GeneratorMatrix& gen, const ProbabilityVector& p0, double t);

/// Marginal over {0..U_i} for one species.
std::vector<double> marginal(const TruncatedStateSpace& space, std::span<const double> p,
                             std::size_t species);

/// Joint over (species a, species b), row-major [x_a][x_b].
std::vector<double> joint_marginal(const TruncatedStateSpace& space, std::span<const double> p,
                                   std::size_t a, std::size_t b);

/// CSV with header "index,<species...>,probability".
void write_probability_csv(const std::string& path, const TruncatedStateSpace& space,
                           const std::vector<std::string>& species_names,
                           const ProbabilityVector& pv);
ProbabilityVector read_probability_csv(const std::string& path, const TruncatedStateSpace& space,
                                       double time);

// ---------------------------------------------------------------------------
// One-step transition kernel evaluated at single states.

/// log p(x) for a state inside the box.
using LogProbFn = std::function<double(std::span<const int>)>;

/// Log-probabilities for a batch of states (same order as the input).
using BatchLogProbFn = std::function<std::vector<double>(const std::vector<State>&)>;

/// Floor applied before taking the logarithm of a kernel value.
inline constexpr double kKernelFloor = 1e-30;

/// ((I + dt T) p)(x) with p = exp(logp). Predecessor terms whose source lies
/// outside the box are skipped, outflow counts only in-box jumps. Throws
/// UnstableStep unless dt times the exit rate of x and of every in-box
/// predecessor is below one.
double apply_kernel_at_state(const ReactionNetwork& net, const RateMap& rates, double dt,
                             const LogProbFn& logp, std::span<const int> x);

/// Batched variant: evaluates logp once over the union of all states and
/// their predecessors. Returns log(max(kernel, kKernelFloor)) per state.
std::vector<double> kernel_log_targets(const ReactionNetwork& net, const RateMap& rates,
                                       double dt, const BatchLogProbFn& logp,
                                       const std::vector<State>& states);

/// Exact kernel exp(dt T) applied to a fully enumerated distribution; for
/// oracle use on small spaces. Returns log(max(p, kKernelFloor)) over the
/// whole enumeration.
std::vector<double> exact_kernel_log_table(const ReactionNetwork& net, const RateMap& rates,
                                           double dt, const BatchLogProbFn& logp,
                                           std::size_t cap = kDefaultStateCap);

struct StateHash {
  std::size_t operator()(const State& s) const noexcept;
};

}  // namespace cmet
