#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmet/diff/optim.hpp"
#include "cmet/met.hpp"
#include "cmet/reward.hpp"

namespace cmet {

struct TrainHyper {
  std::size_t s_batch = 1000;  // samples per reward element
  std::size_t m_acc = 100;     // elements per update
  std::size_t epochs = 10000;  // updates
  diff::Schedule schedule{1e-3, 200, diff::DecayLaw::InverseSqrt};
  diff::AdamWConfig adam{0.9, 0.999, 1e-8, 0.0};
  double clip_norm = 1.0;  // 0 disables clipping
  /// Clipped-ratio surrogate with several passes over each batch; off by
  /// default in favour of the plain score-function estimator.
  bool ppo = false;
  double ppo_clip = 0.2;
  std::size_t ppo_epochs = 4;
  bool exact_kernel = false;
  /// Standardize prompt entries over the reward set before training.
  bool fit_norm = true;
  double diverge_threshold = 50.0;
  std::size_t patience = 50;
  std::uint64_t seed = 0;
};

struct TrainRecord {
  std::size_t step = 0;
  std::string element;  // rates key | init | t
  double kl = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainRecord> trace;
  std::vector<double> epoch_kl;  // mean KL estimate per update
};

/// One training element: a reward checkpoint and the prompt it answers.
struct RewardElement {
  std::string key;
  RateMap rates;
  State init;
  double t = 0.0;   // reward-model time
  double dt = 0.0;  // kernel step; the prompt time is t + dt
  Prompt prompt;
  RewardModel model;
};

std::vector<RewardElement> load_reward_elements(const RewardModelSet& set, const ReactionNetwork& net);

using EpochFn = std::function<void(std::size_t epoch, double mean_kl, double lr)>;

/// RLMF: each update draws m_acc elements (epoch-wise shuffled), samples
/// s_batch states per element from the current model at prompt time t + dt,
/// scores them with r = ln (kernel applied to the element's reward model) -
/// ln p_model, subtracts the per-element batch mean and descends
/// sum_s -(r_s - b) ln p(x_s) / (s_batch * m_acc) with AdamW.
TrainResult train_met(METModel& model, const std::vector<RewardElement>& elements, const ReactionNetwork& net,
                      const TrainHyper& hyper, const EpochFn& on_epoch = {});

TrainResult train_met(METModel& model, const RewardModelSet& set, const ReactionNetwork& net,
                      const TrainHyper& hyper, const EpochFn& on_epoch = {});

/// The score-function surrogate coefficients for one element's distinct
/// samples: c_s = -m_s (r_s - b) / scale with b the sample-mean reward.
/// Returns the KL estimate mean(ln p - target).
double score_coefficients(std::span<const double> logp, std::span<const double> target,
                          std::span<const double> multiplicity, double scale, bool baseline,
                          std::vector<double>& coeff);

void write_trace_csv(const std::string& path, const TrainResult& result);

}  // namespace cmet
