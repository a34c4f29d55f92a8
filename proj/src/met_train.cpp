#include "cmet/met_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_map>

#include "cmet/autoregressive.hpp"
#include "cmet/error.hpp"
#include "cmet/parallel.hpp"
#include "cmet/statespace.hpp"

namespace cmet {

double score_coefficients(std::span<const double> logp, std::span<const double> target,
                          std::span<const double> multiplicity, double scale, bool baseline,
                          std::vector<double>& coeff) {
  const double S = std::accumulate(multiplicity.begin(), multiplicity.end(), 0.0);
  double b = 0.0, kl = 0.0;
  for (std::size_t s = 0; s < logp.size(); ++s) {
    b += multiplicity[s] * (target[s] - logp[s]);
    kl += multiplicity[s] * (logp[s] - target[s]);
  }
  b = baseline ? b / S : 0.0;
  coeff.resize(logp.size());
  for (std::size_t s = 0; s < logp.size(); ++s) {
    coeff[s] = -multiplicity[s] * ((target[s] - logp[s]) - b) / scale;
  }
  return kl / S;
}

std::vector<RewardElement> load_reward_elements(const RewardModelSet& set, const ReactionNetwork& net) {
  set.validate(net);
  std::vector<RewardElement> out;
  for (const RewardSetEntry& e : set.entries()) {
    std::string key = rates_key(net, e.rates) + "|";
    for (std::size_t i = 0; i < e.init.size(); ++i) key += (i ? "," : "") + std::to_string(e.init[i]);
    key += "|" + std::to_string(e.t);
    out.push_back(RewardElement{key, e.rates, e.init, e.t, e.dt, build_prompt(net, e.rates, e.init, e.t + e.dt),
                                set.load(e)});
  }
  if (out.empty()) throw Error(ErrorKind::InvalidArgument, "reward set " + set.dir() + " is empty");
  return out;
}

namespace {

// Kernel targets for one element, memoized across updates: the reward model
// is frozen, so every state is scored at most once.
class TargetCache {
 public:
  TargetCache(const RewardElement& e, const ReactionNetwork& net, bool exact) : e_(e), net_(net) {
    if (exact) {
      exact_ = exact_kernel_log_table(net, e.rates, e.dt, [&](const std::vector<State>& xs) {
        return e_.model.logprob(xs);
      });
      space_.emplace(net.bounds);
    }
  }

  std::vector<double> targets(const std::vector<State>& states) {
    std::vector<double> out(states.size());
    if (space_) {
      for (std::size_t i = 0; i < states.size(); ++i) out[i] = exact_[space_->encode(states[i])];
      return out;
    }
    std::vector<State> missing;
    for (const State& s : states) {
      if (!target_.count(s)) missing.push_back(s);
    }
    if (!missing.empty()) {
      const BatchLogProbFn reward = [&](const std::vector<State>& xs) {
        std::vector<State> todo;
        for (const State& x : xs) {
          if (!logp_.count(x)) todo.push_back(x);
        }
        if (!todo.empty()) {
          const std::vector<double> lp = e_.model.logprob(todo);
          for (std::size_t j = 0; j < todo.size(); ++j) logp_.emplace(todo[j], lp[j]);
        }
        std::vector<double> r(xs.size());
        for (std::size_t j = 0; j < xs.size(); ++j) r[j] = logp_.at(xs[j]);
        return r;
      };
      const std::vector<double> v = kernel_log_targets(net_, e_.rates, e_.dt, reward, missing);
      for (std::size_t j = 0; j < missing.size(); ++j) target_.emplace(missing[j], v[j]);
    }
    for (std::size_t i = 0; i < states.size(); ++i) out[i] = target_.at(states[i]);
    return out;
  }

 private:
  const RewardElement& e_;
  const ReactionNetwork& net_;
  std::unordered_map<State, double, StateHash> logp_;
  std::unordered_map<State, double, StateHash> target_;
  std::vector<double> exact_;
  std::optional<TruncatedStateSpace> space_;
};

}  // namespace

TrainResult train_met(METModel& model, const std::vector<RewardElement>& elements, const ReactionNetwork& net,
                      const TrainHyper& hyper, const EpochFn& on_epoch) {
  if (hyper.s_batch < 2) throw Error(ErrorKind::InvalidArgument, "S_batch must be at least 2");
  if (hyper.m_acc < 1) throw Error(ErrorKind::InvalidArgument, "M_acc must be at least 1");
  if (elements.empty()) throw Error(ErrorKind::InvalidArgument, "no training elements");
  if (hyper.fit_norm) {
    std::vector<Prompt> prompts;
    for (const RewardElement& e : elements) prompts.push_back(e.prompt);
    model.set_norm(PromptNorm::fit(prompts));
  }
  std::vector<TargetCache> caches;
  caches.reserve(elements.size());
  for (const RewardElement& e : elements) caches.emplace_back(e, net, hyper.exact_kernel);

  TrainResult result;
  std::vector<std::size_t> order(elements.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on first use
  std::size_t pass = 0;
  std::size_t over = 0;
  const double scale = static_cast<double>(hyper.s_batch) * static_cast<double>(hyper.m_acc);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<std::size_t> chosen;
    while (chosen.size() < hyper.m_acc) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(stream_seed(hyper.seed, 0x5107, pass++));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        cursor = 0;
      }
      chosen.push_back(order[cursor++]);
    }
    std::vector<Prompt> prompts;
    for (std::size_t e : chosen) prompts.push_back(elements[e].prompt);

    const auto samples = model.sample_batch(prompts, hyper.s_batch, stream_seed(hyper.seed, epoch));
    std::vector<UniqueStates> uniq(chosen.size());
    std::vector<METModel::Group> groups(chosen.size());
    for (std::size_t g = 0; g < chosen.size(); ++g) {
      uniq[g] = deduplicate(samples[g]);
      groups[g] = {static_cast<std::uint32_t>(g), uniq[g].states};
    }

    // Targets, one worker per distinct element.
    std::vector<std::vector<double>> target(chosen.size());
    std::vector<std::size_t> distinct(chosen.begin(), chosen.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    parallel_for(distinct.size(), [&](std::size_t k) {
      for (std::size_t g = 0; g < chosen.size(); ++g) {
        if (chosen[g] == distinct[k]) target[g] = caches[distinct[k]].targets(uniq[g].states);
      }
    });

    const double lr = hyper.schedule(model.params().step);
    std::vector<double> kl(chosen.size(), 0.0);
    std::vector<std::vector<double>> logp_old;
    const std::size_t passes = hyper.ppo ? std::max<std::size_t>(hyper.ppo_epochs, 1) : 1;
    for (std::size_t pass_i = 0; pass_i < passes; ++pass_i) {
      diff::Tape tape;
      std::vector<std::vector<double>> logp;
      diff::Var loss = model.weighted_logprob(
          tape, prompts, groups,
          [&](const std::vector<std::vector<double>>& lp, std::vector<std::vector<double>>& coeff) {
            for (std::size_t g = 0; g < lp.size(); ++g) {
              const double k = score_coefficients(lp[g], target[g], uniq[g].multiplicity, scale, true, coeff[g]);
              if (pass_i == 0) kl[g] = k;
              if (!hyper.ppo) continue;
              if (pass_i == 0) logp_old.push_back(lp[g]);
              // The clipped objective's gradient is the score-function
              // gradient scaled by the probability ratio, and zero where the
              // ratio has left the trust region in the advantage's direction.
              for (std::size_t s = 0; s < lp[g].size(); ++s) {
                const double ratio = std::exp(lp[g][s] - logp_old[g][s]);
                const double adv = -coeff[g][s];
                const bool clipped = (adv > 0 && ratio > 1.0 + hyper.ppo_clip) ||
                                     (adv < 0 && ratio < 1.0 - hyper.ppo_clip);
                coeff[g][s] = clipped ? 0.0 : coeff[g][s] * ratio;
              }
            }
          },
          logp);
      if (pass_i == 0) {
        const double mean_kl = std::accumulate(kl.begin(), kl.end(), 0.0) / static_cast<double>(kl.size());
        if (!std::isfinite(mean_kl)) {
          throw Error(ErrorKind::DivergedLoss, "non-finite KL estimate at update " + std::to_string(epoch));
        }
        over = mean_kl > hyper.diverge_threshold ? over + 1 : 0;
        if (over >= hyper.patience) {
          throw Error(ErrorKind::DivergedLoss, "KL estimate " + std::to_string(mean_kl) + " above " +
                                                   std::to_string(hyper.diverge_threshold) + " for " +
                                                   std::to_string(over) + " updates");
        }
        result.epoch_kl.push_back(mean_kl);
        for (std::size_t g = 0; g < chosen.size(); ++g) {
          result.trace.push_back({epoch, elements[chosen[g]].key, kl[g], lr});
        }
      }
      model.params().zero_grad();
      tape.backward(loss);
      if (hyper.clip_norm > 0.0) diff::clip_grad_norm(model.params(), hyper.clip_norm);
      diff::adamw_step(model.params(), hyper.schedule, hyper.adam);
    }
    if (on_epoch) on_epoch(epoch, result.epoch_kl.back(), lr);
  }
  return result;
}

TrainResult train_met(METModel& model, const RewardModelSet& set, const ReactionNetwork& net,
                      const TrainHyper& hyper, const EpochFn& on_epoch) {
  return train_met(model, load_reward_elements(set, net), net, hyper, on_epoch);
}

void write_trace_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(10);
  out << "step,element,kl,lr\n";
  for (const TrainRecord& r : result.trace) {
    out << r.step << ",\"" << r.element << "\"," << r.kl << ',' << r.lr << '\n';
  }
}

}  // namespace cmet
