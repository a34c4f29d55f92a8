#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmet/model.hpp"

namespace cmet {

enum class EnsembleMethod : std::uint32_t { SSA = 0, MET = 1, RNN = 2 };

const char* to_string(EnsembleMethod m);

/// States of n trajectories on a shared time grid, stored flat as
/// [trajectory][time index][species].
struct TrajectoryEnsemble {
  std::vector<double> grid;
  std::size_t num_species = 0;
  std::size_t n_traj = 0;
  std::uint64_t seed = 0;
  EnsembleMethod method = EnsembleMethod::SSA;
  std::vector<std::int32_t> states;

  std::span<const std::int32_t> at(std::size_t traj, std::size_t time_index) const {
    return {states.data() + (traj * grid.size() + time_index) * num_species, num_species};
  }
  std::span<std::int32_t> at(std::size_t traj, std::size_t time_index) {
    return {states.data() + (traj * grid.size() + time_index) * num_species, num_species};
  }

  bool operator==(const TrajectoryEnsemble&) const = default;
};

/// Gillespie direct method under reflecting truncation: reactions whose jump
/// would leave the box are disabled. States are recorded at grid times by
/// holding the last value. Trajectory k uses Rng(stream_seed(seed, k)), so
/// the ensemble does not depend on the worker count.
TrajectoryEnsemble simulate(const ReactionNetwork& net, const RateMap& rates, const State& x0,
                            const std::vector<double>& grid, std::size_t n_traj, std::uint64_t seed);

/// Empirical distribution of one species over {0..max_value}. Throws
/// TimeIndexOutOfRange for a bad index.
std::vector<double> marginals_at(const TrajectoryEnsemble& ens, std::size_t time_index, std::size_t species,
                                 int max_value);

/// Per-species ensemble mean and (population) standard deviation.
std::vector<double> ensemble_mean(const TrajectoryEnsemble& ens, std::size_t time_index);
std::vector<double> ensemble_std(const TrajectoryEnsemble& ens, std::size_t time_index);

/// Binary table: "METENS01", u32 version, u32 species, u64 grid size,
/// u64 trajectories, u64 seed, u32 method, f64 grid[], i32 states[].
void write_ensemble(const std::string& path, const TrajectoryEnsemble& ens);
TrajectoryEnsemble read_ensemble(const std::string& path);
/// CSV with header "trajectory,time,<species...>".
void write_ensemble_csv(const std::string& path, const TrajectoryEnsemble& ens,
                        const std::vector<std::string>& species_names);

}  // namespace cmet
