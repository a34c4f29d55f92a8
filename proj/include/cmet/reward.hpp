#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmet/autoregressive.hpp"
#include "cmet/diff/parameters.hpp"
#include "cmet/diff/tape.hpp"
#include "cmet/model.hpp"
#include "cmet/random.hpp"

namespace cmet {

/// Autoregressive GRU over species in declaration order:
/// p(x) = prod_i p(x_i | x_<i). Position i reads the embedding of x_{i-1}
/// (a start token for i = 0) into a shared single-layer GRU and maps the
/// hidden state through its own output head onto {0..U_i}.
class RewardModel {
 public:
  RewardModel(std::vector<int> bounds, std::size_t hidden, std::uint64_t seed);

  std::size_t num_species() const noexcept { return bounds_.size(); }
  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t hidden() const noexcept { return hidden_; }
  const std::vector<int>& bounds() const noexcept { return bounds_; }
  diff::ParameterStore& params() noexcept { return params_; }
  const diff::ParameterStore& params() const noexcept { return params_; }

  /// log p for each state (any order, duplicates allowed).
  std::vector<double> logprob(const std::vector<State>& states) const;
  double logprob(std::span<const int> x) const;

  /// The N conditionals along x, each over {0..vocab-1}.
  std::vector<std::vector<double>> conditionals(std::span<const int> x) const;

  /// Ancestral samples, evaluated level by level over distinct prefixes.
  std::vector<State> sample(std::size_t n, Rng& rng) const;
  std::vector<State> sample(std::size_t n, std::uint64_t seed) const;

  /// Maps the log-probabilities of a state list to per-state loss weights.
  using CoeffFn = std::function<std::vector<double>(std::span<const double> logp)>;

  /// Records sum_s c[s] * log p(states[s]) on the tape with c = coeff(logp).
  /// `states` must be sorted and distinct; their log-probabilities are
  /// written to `logp`.
  diff::Var weighted_logprob(diff::Tape& tape, const std::vector<State>& states, const CoeffFn& coeff,
                             std::vector<double>& logp);

  void save(const std::string& path, nlohmann::json metadata) const;
  static RewardModel load(const std::string& path);

 private:
  struct Forward {
    PrefixTrie trie;
    std::vector<diff::Var> log_probs;  // per level i < N: [nodes_i, vocab]
  };
  Forward forward(diff::Tape& tape, diff::ParameterStore& store, const std::vector<State>& states) const;
  diff::Var gru(diff::Tape& tape, diff::ParameterStore& store, diff::Var x, diff::Var h) const;
  diff::Var head(diff::Tape& tape, diff::ParameterStore& store, diff::Var h, std::size_t position) const;

  std::vector<int> bounds_;
  std::size_t vocab_;
  std::size_t hidden_;
  std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> masks_;
  diff::ParameterStore params_;
};

struct RewardHyper {
  std::size_t hidden = 32;
  std::size_t batch = 1000;
  std::size_t epochs = 100;  // per time step
  double dt = 1e-2;
  double lr = 1e-3;  // constant rate
  double pretrain_lr = 1e-2;
  std::size_t pretrain_max_epochs = 5000;
  double pretrain_tol = 1e-4;
  /// DivergedLoss once the KL estimate exceeds this for `patience`
  /// consecutive epochs (or is not finite).
  double diverge_threshold = 5.0;
  std::size_t patience = 20;
  /// Use exp(dt T) over the full enumeration instead of I + dt T.
  bool exact_kernel = false;
  std::uint64_t seed = 0;
};

struct RewardStepStats {
  std::size_t step = 0;
  double t = 0.0;
  double kl = 0.0;  // mean KL estimate over the step's final epoch
};

using RewardSaveFn = std::function<void(double t, const RewardModel& model)>;

/// Variational time stepping from a delta at x0: pretrain onto x0, then for
/// each step t -> t + dt fit the model to the first-order kernel applied to a
/// frozen copy of the previous step's model. on_save fires at each requested
/// time (matched to the nearest step). Returns per-step statistics.
std::vector<RewardStepStats> train_reward_chain(const ReactionNetwork& net, const RateMap& rates,
                                                const State& x0, std::vector<double> save_times,
                                                const RewardHyper& hyper, const RewardSaveFn& on_save,
                                                double* pretrain_loss = nullptr);

/// Delta pretraining alone; returns the final cross-entropy.
double pretrain_delta(RewardModel& model, const State& x0, const RewardHyper& hyper);

// ---------------------------------------------------------------------------

/// Rates key: natural-log rate per reaction rounded to 1e-9.
std::string rates_key(const ReactionNetwork& net, const RateMap& rates);

struct RewardSetEntry {
  RateMap rates;
  State init;
  double t = 0.0;
  double dt = 0.0;
  std::string path;  // relative to the set directory
  std::string hash;  // fnv1a of the checkpoint file
};

/// Append-only directory of reward checkpoints with a JSONL manifest
/// ("manifest.jsonl", one record per checkpoint).
class RewardModelSet {
 public:
  explicit RewardModelSet(std::string dir);
  /// Reads <dir>/manifest.jsonl; throws Io if it is missing.
  static RewardModelSet open(const std::string& dir);

  const std::string& dir() const noexcept { return dir_; }
  const std::vector<RewardSetEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Records an entry and appends it to the manifest.
  void append(const RewardSetEntry& entry);
  /// Loads a checkpoint, verifying its hash.
  RewardModel load(const RewardSetEntry& entry) const;
  std::optional<std::size_t> find(const ReactionNetwork& net, const RateMap& rates, const State& init,
                                  double t) const;

  /// Throws BadFormat unless time points strictly increase per (rates, init)
  /// and every entry's file exists.
  void validate(const ReactionNetwork& net) const;

 private:
  std::string dir_;
  std::vector<RewardSetEntry> entries_;
};

/// Trains one chain and records every save time in `set`.
std::vector<RewardStepStats> train_reward_set(const ReactionNetwork& net, const RateMap& rates,
                                              const State& x0, const std::vector<double>& save_times,
                                              const RewardHyper& hyper, RewardModelSet& set);

struct RewardChainSpec {
  RateMap rates;
  State init;
};

/// Trains independent chains in parallel (chain c seeded by
/// stream_seed(hyper.seed, c)) and appends their entries in chain order.
std::vector<std::vector<RewardStepStats>> train_reward_grid(const ReactionNetwork& net,
                                                            const std::vector<RewardChainSpec>& chains,
                                                            const std::vector<double>& save_times,
                                                            const RewardHyper& hyper, RewardModelSet& set);

}  // namespace cmet
