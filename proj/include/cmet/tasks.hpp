#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cmet/met.hpp"
#include "cmet/model.hpp"
#include "cmet/ssa.hpp"

namespace cmet {

// ---- parameter sweeps -------------------------------------------------------

/// Draws n states of the system at the given rates.
using StateSampler = std::function<std::vector<State>(const RateMap& rates, std::size_t n, std::uint64_t seed)>;

/// Sampler backed by a trained MET at fixed (x0, t).
StateSampler met_sampler(const METModel& model, const ReactionNetwork& net, State x0, double t);
/// Reference sampler: the state at time t of n independent SSA trajectories.
StateSampler ssa_sampler(const ReactionNetwork& net, State x0, double t);

struct SweepAxis {
  std::string symbol;
  std::vector<double> values;
};

struct SweepCell {
  double a = 0.0;
  double b = 0.0;
  /// Empty when the sampled counts have no spread.
  std::optional<double> coefficient;
};

/// Bimodality coefficient of one species' counts at every (a, b) grid point,
/// the other rates fixed at `base`. Cells are returned row-major (a outer)
/// and seeded from the rate values, so a repeated grid point reproduces the
/// same coefficient.
std::vector<SweepCell> sweep_bimodality(const StateSampler& sampler, const RateMap& base, const SweepAxis& a,
                                        const SweepAxis& b, std::size_t species, std::size_t n_samples,
                                        std::uint64_t seed);

/// "a,b,coefficient" with an empty coefficient for missing cells.
void write_sweep_csv(const std::string& path, const SweepAxis& a, const SweepAxis& b,
                     const std::vector<SweepCell>& cells);

// ---- rate inference ---------------------------------------------------------

/// MeanLogProb is the log-likelihood per transition. MeanProb (the arithmetic
/// mean of transition probabilities) rewards narrow kernels and is not a
/// consistent estimator; it is kept for comparison.
enum class InferenceCriterion { MeanProb, MeanLogProb };

struct InferenceOptions {
  std::size_t steps = 1000;
  /// Standard deviation of the log-rate random walk, per free symbol.
  double proposal_std = 0.05;
  /// (trajectory, time index) pairs drawn from the data per step.
  std::size_t batch = 1000;
  InferenceCriterion criterion = InferenceCriterion::MeanLogProb;
  /// Metropolis acceptance on the summed log-likelihood instead of greedy
  /// ascent on the criterion.
  bool metropolis = false;
  std::uint64_t seed = 0;
};

struct InferenceChain {
  std::vector<std::string> symbols;     // free symbols, in visiting order
  std::vector<RateMap> visited;         // steps + 1 points, starting point first
  std::vector<bool> accepted;           // per step
  std::vector<double> score;            // criterion of the current point after each step
  std::vector<double> proposal_std;     // per free symbol
  std::uint64_t seed = 0;

  std::size_t acceptance_count() const;
  /// Per-symbol median over the second half of the chain.
  RateMap estimate() const;
};

/// Random-walk search over the free rates. Every step draws `batch` pairs
/// (trajectory k, time index i >= 1) from the data and scores the proposal
/// by the MET probability of x_k(t_i) given the prompt (rates, x_k(t_{i-1}),
/// t_i - t_{i-1}); the current point is re-scored on the same pairs.
InferenceChain infer_rates(const METModel& model, const ReactionNetwork& net, const TrajectoryEnsemble& data,
                           const RateMap& start, const std::vector<std::string>& free_symbols,
                           const InferenceOptions& options);

/// "step,accepted,score,<symbols...>".
void write_chain_csv(const std::string& path, const InferenceChain& chain);

// ---- trajectory ensembles ---------------------------------------------------

/// Advances n_traj trajectories by repeatedly sampling x_k ~ p(. | rates,
/// x_{k-1}, dt) from the MET. Trajectory j draws from streams derived from
/// (seed, step, j), so ensembles do not depend on batching or worker count.
TrajectoryEnsemble sample_trajectories_iterative(const METModel& model, const ReactionNetwork& net,
                                                 const RateMap& rates, const State& x0, double dt,
                                                 std::size_t n_steps, std::size_t n_traj, std::uint64_t seed);

}  // namespace cmet
