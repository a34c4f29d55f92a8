#include "cmet/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "cmet/diff/checkpoint.hpp"
#include "cmet/diff/ops.hpp"
#include "cmet/diff/optim.hpp"
#include "cmet/error.hpp"
#include "cmet/statespace.hpp"

namespace cmet {

using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

Tensor uniform_tensor(diff::Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

Tensor normal_tensor(diff::Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

std::string head_name(std::size_t i, const char* part) {
  return "head" + std::to_string(i) + "." + part;
}

}  // namespace

RewardModel::RewardModel(std::vector<int> bounds, std::size_t hidden, std::uint64_t seed)
    : bounds_(std::move(bounds)), hidden_(hidden) {
  if (bounds_.empty()) throw Error(ErrorKind::InvalidArgument, "reward model needs at least one species");
  if (hidden_ == 0) throw Error(ErrorKind::InvalidArgument, "reward model width must be positive");
  vocab_ = static_cast<std::size_t>(*std::max_element(bounds_.begin(), bounds_.end())) + 1;
  const auto mask = bound_mask(bounds_, vocab_);
  for (std::size_t i = 0; i < bounds_.size(); ++i) {
    masks_.push_back(std::make_shared<const std::vector<std::uint8_t>>(
        mask->begin() + static_cast<std::ptrdiff_t>(i * vocab_),
        mask->begin() + static_cast<std::ptrdiff_t>((i + 1) * vocab_)));
  }

  Rng rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_));
  const std::size_t h = hidden_;
  params_.add("embed", normal_tensor({vocab_ + 1, h}, rng));  // last row: start token
  params_.add("gru.wi", uniform_tensor({h, 3 * h}, k, rng));
  params_.add("gru.bi", uniform_tensor({3 * h}, k, rng));
  params_.add("gru.wh", uniform_tensor({h, 3 * h}, k, rng));
  params_.add("gru.bh", uniform_tensor({3 * h}, k, rng));
  for (std::size_t i = 0; i < bounds_.size(); ++i) {
    params_.add(head_name(i, "w"), uniform_tensor({h, vocab_}, k, rng));
    params_.add(head_name(i, "b"), uniform_tensor({vocab_}, k, rng));
  }
}

// Gate layout follows the usual (reset, update, new) convention:
//   r = s(Wi_r x + bi_r + Wh_r h + bh_r), z likewise,
//   n = tanh(Wi_n x + bi_n + r * (Wh_n h + bh_n)),  h' = n + z * (h - n).
Var RewardModel::gru(Tape& tape, diff::ParameterStore& store, Var x, Var h) const {
  const std::size_t H = hidden_;
  Var gi = diff::linear(x, tape.param(store.at("gru.wi")), tape.param(store.at("gru.bi")));
  Var gh = diff::linear(h, tape.param(store.at("gru.wh")), tape.param(store.at("gru.bh")));
  Var rz = diff::sigmoid(diff::add(diff::slice(gi, 1, 0, 2 * H), diff::slice(gh, 1, 0, 2 * H)));
  Var r = diff::slice(rz, 1, 0, H);
  Var z = diff::slice(rz, 1, H, H);
  Var n = diff::tanh(diff::add(diff::slice(gi, 1, 2 * H, H), diff::mul(r, diff::slice(gh, 1, 2 * H, H))));
  return diff::add(n, diff::mul(z, diff::sub(h, n)));
}

Var RewardModel::head(Tape& tape, diff::ParameterStore& store, Var h, std::size_t position) const {
  Var logits = diff::linear(h, tape.param(store.at(head_name(position, "w"))),
                            tape.param(store.at(head_name(position, "b"))));
  logits = diff::masked_fill(logits, masks_[position], -std::numeric_limits<double>::infinity());
  return diff::log_softmax(logits);
}

RewardModel::Forward RewardModel::forward(Tape& tape, diff::ParameterStore& store,
                                          const std::vector<State>& states) const {
  Forward f;
  f.trie = PrefixTrie::build(states);
  const std::size_t n = bounds_.size();
  Var embed = tape.param(store.at("embed"));
  const std::uint32_t start = static_cast<std::uint32_t>(vocab_);
  Var h = gru(tape, store, diff::embedding(embed, std::span(&start, 1)),
              tape.constant(Tensor({1, hidden_}, 0.0)));
  f.log_probs.push_back(head(tape, store, h, 0));
  for (std::size_t i = 1; i < n; ++i) {
    const PrefixTrie::Level& lv = f.trie.levels[i];
    Var x = diff::embedding(embed, lv.token);
    Var hp = diff::embedding(h, lv.parent);
    h = gru(tape, store, x, hp);
    f.log_probs.push_back(head(tape, store, h, i));
  }
  return f;
}

std::vector<double> RewardModel::logprob(const std::vector<State>& states) const {
  if (states.empty()) return {};
  const UniqueStates u = deduplicate(states);
  Tape tape(false);
  // Inference tapes never write into parameters.
  auto& store = const_cast<diff::ParameterStore&>(params_);
  const Forward f = forward(tape, store, u.states);
  std::vector<double> lp(u.states.size(), 0.0);
  for (std::size_t s = 0; s < u.states.size(); ++s) {
    for (std::size_t i = 0; i < bounds_.size(); ++i) {
      const int xi = u.states[s][i];
      if (xi < 0 || xi > bounds_[i]) {
        lp[s] = -std::numeric_limits<double>::infinity();
        break;
      }
      lp[s] += tape.value(f.log_probs[i]).data[f.trie.node[i][s] * vocab_ + static_cast<std::size_t>(xi)];
    }
  }
  std::vector<double> out(states.size());
  for (std::size_t k = 0; k < states.size(); ++k) out[k] = lp[u.of_sample[k]];
  return out;
}

double RewardModel::logprob(std::span<const int> x) const {
  return logprob(std::vector<State>{State(x.begin(), x.end())}).front();
}

std::vector<std::vector<double>> RewardModel::conditionals(std::span<const int> x) const {
  Tape tape(false);
  auto& store = const_cast<diff::ParameterStore&>(params_);
  State s(x.begin(), x.end());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::clamp(s[i], 0, bounds_[i]);
  const Forward f = forward(tape, store, {s});
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < bounds_.size(); ++i) {
    const Tensor& lp = tape.value(f.log_probs[i]);
    std::vector<double> row(vocab_);
    for (std::size_t v = 0; v < vocab_; ++v) row[v] = std::exp(lp.data[v]);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<State> RewardModel::sample(std::size_t n, Rng& rng) const {
  const std::size_t N = bounds_.size();
  std::vector<State> out(n, State(N, 0));
  if (n == 0) return out;
  Tape tape(false);
  auto& store = const_cast<diff::ParameterStore&>(params_);
  Var embed = tape.param(store.at("embed"));
  const std::uint32_t start = static_cast<std::uint32_t>(vocab_);
  Var h = gru(tape, store, diff::embedding(embed, std::span(&start, 1)),
              tape.constant(Tensor({1, hidden_}, 0.0)));
  std::vector<std::uint32_t> node(n, 0);
  std::vector<double> probs;
  for (std::size_t i = 0; i < N; ++i) {
    const Tensor& lp = tape.value(head(tape, store, h, i));
    probs.resize(lp.size());
    for (std::size_t j = 0; j < lp.size(); ++j) probs[j] = std::exp(lp.data[j]);
    for (std::size_t k = 0; k < n; ++k) {
      std::span<const double> row(probs.data() + node[k] * vocab_, vocab_);
      double total = 0.0;
      for (double p : row) total += p;
      out[k][i] = static_cast<int>(rng.categorical(row, total));
    }
    if (i + 1 == N) break;
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> children;
    for (std::size_t k = 0; k < n; ++k) children.emplace(std::pair(node[k], std::uint32_t(out[k][i])), 0);
    std::vector<std::uint32_t> parent, token;
    for (auto& [key, id] : children) {
      id = static_cast<std::uint32_t>(parent.size());
      parent.push_back(key.first);
      token.push_back(key.second);
    }
    for (std::size_t k = 0; k < n; ++k) node[k] = children.at({node[k], std::uint32_t(out[k][i])});
    h = gru(tape, store, diff::embedding(embed, token), diff::embedding(h, parent));
  }
  return out;
}

std::vector<State> RewardModel::sample(std::size_t n, std::uint64_t seed) const {
  Rng rng(seed);
  return sample(n, rng);
}

Var RewardModel::weighted_logprob(Tape& tape, const std::vector<State>& states, const CoeffFn& coeff,
                                  std::vector<double>& logp) {
  const Forward f = forward(tape, params_, states);
  const std::size_t N = bounds_.size();
  logp.assign(states.size(), 0.0);
  for (std::size_t s = 0; s < states.size(); ++s) {
    for (std::size_t i = 0; i < N; ++i) {
      logp[s] += tape.value(f.log_probs[i]).data[f.trie.node[i][s] * vocab_ +
                                                 static_cast<std::size_t>(states[s][i])];
    }
  }
  const std::vector<double> c = coeff(logp);
  if (c.size() != states.size()) throw Error(ErrorKind::ShapeMismatch, "one coefficient per state expected");
  Var total;
  for (std::size_t i = 0; i < N; ++i) {
    auto w = std::make_shared<Tensor>(tape.value(f.log_probs[i]).shape, 0.0);
    for (std::size_t s = 0; s < states.size(); ++s) {
      w->data[f.trie.node[i][s] * vocab_ + static_cast<std::size_t>(states[s][i])] += c[s];
    }
    Var term = diff::weighted_sum(f.log_probs[i], std::move(w));
    total = total.valid() ? diff::add(total, term) : term;
  }
  return total;
}

void RewardModel::save(const std::string& path, nlohmann::json metadata) const {
  metadata["kind"] = "gru_reward";
  metadata["bounds"] = bounds_;
  metadata["hidden"] = hidden_;
  diff::save_checkpoint(path, params_, std::move(metadata));
}

RewardModel RewardModel::load(const std::string& path) {
  const nlohmann::json meta = diff::read_checkpoint_metadata(path);
  if (meta.value("kind", "") != "gru_reward") {
    throw Error(ErrorKind::BadFormat, path + ": not a reward-model checkpoint");
  }
  RewardModel m(meta.at("bounds").get<std::vector<int>>(), meta.at("hidden").get<std::size_t>(), 0);
  diff::load_checkpoint(path, m.params_);
  return m;
}

// ---------------------------------------------------------------------------

double pretrain_delta(RewardModel& model, const State& x0, const RewardHyper& hyper) {
  const diff::Schedule schedule{hyper.pretrain_lr, 0, diff::DecayLaw::Constant};
  const std::vector<State> target{x0};
  double loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < hyper.pretrain_max_epochs; ++epoch) {
    Tape tape;
    std::vector<double> lp;
    Var l = model.weighted_logprob(tape, target, [](std::span<const double>) { return std::vector<double>{-1.0}; },
                                   lp);
    loss = -lp[0];
    if (loss < hyper.pretrain_tol) break;
    model.params().zero_grad();
    tape.backward(l);
    diff::adamw_step(model.params(), schedule);
  }
  if (!(loss < hyper.pretrain_tol)) {
    throw Error(ErrorKind::DivergedLoss, "delta pretraining stalled at cross-entropy " + std::to_string(loss));
  }
  model.params().step = 0;
  for (diff::Parameter& p : model.params().all()) {
    std::fill(p.first_moment.data.begin(), p.first_moment.data.end(), 0.0);
    std::fill(p.second_moment.data.begin(), p.second_moment.data.end(), 0.0);
  }
  return loss;
}

std::vector<RewardStepStats> train_reward_chain(const ReactionNetwork& net, const RateMap& rates,
                                                const State& x0, std::vector<double> save_times,
                                                const RewardHyper& hyper, const RewardSaveFn& on_save,
                                                double* pretrain_loss) {
  if (!net.in_bounds(x0)) throw Error(ErrorKind::InvalidArgument, "initial state outside the bounds");
  if (!(hyper.dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "time step must be positive");
  if (hyper.batch < 2) throw Error(ErrorKind::InvalidArgument, "batch must be at least 2");
  std::sort(save_times.begin(), save_times.end());

  RewardModel model(net.bounds, hyper.hidden, stream_seed(hyper.seed, 0x5eed));
  const double pre = pretrain_delta(model, x0, hyper);
  if (pretrain_loss != nullptr) *pretrain_loss = pre;

  auto step_of = [&](double t) { return static_cast<std::size_t>(std::llround(t / hyper.dt)); };
  std::size_t next_save = 0;
  while (next_save < save_times.size() && step_of(save_times[next_save]) == 0) {
    if (on_save) on_save(0.0, model);
    ++next_save;
  }
  if (save_times.empty()) return {};
  const std::size_t n_steps = step_of(save_times.back());
  const diff::Schedule schedule{hyper.lr, 0, diff::DecayLaw::Constant};
  const double S = static_cast<double>(hyper.batch);

  std::vector<RewardStepStats> stats;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    const RewardModel frozen = model;
    std::unordered_map<State, double, StateHash> memo;
    const BatchLogProbFn frozen_logp = [&](const std::vector<State>& xs) {
      std::vector<State> missing;
      for (const State& x : xs) {
        if (!memo.count(x)) missing.push_back(x);
      }
      if (!missing.empty()) {
        const std::vector<double> lp = frozen.logprob(missing);
        for (std::size_t j = 0; j < missing.size(); ++j) memo.emplace(missing[j], lp[j]);
      }
      std::vector<double> out(xs.size());
      for (std::size_t j = 0; j < xs.size(); ++j) out[j] = memo.at(xs[j]);
      return out;
    };
    std::vector<double> exact_table;
    std::optional<TruncatedStateSpace> space;
    if (hyper.exact_kernel) {
      exact_table = exact_kernel_log_table(net, rates, hyper.dt, frozen_logp);
      space.emplace(net.bounds);
    }

    double kl = 0.0;
    std::size_t over = 0;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
      Rng rng(stream_seed(hyper.seed, k, epoch));
      const UniqueStates u = deduplicate(model.sample(hyper.batch, rng));
      std::vector<double> target;
      if (hyper.exact_kernel) {
        for (const State& s : u.states) target.push_back(exact_table[space->encode(s)]);
      } else {
        target = kernel_log_targets(net, rates, hyper.dt, frozen_logp, u.states);
      }
      Tape tape;
      std::vector<double> lp;
      Var loss = model.weighted_logprob(
          tape, u.states,
          [&](std::span<const double> logp) {
            double baseline = 0.0;
            kl = 0.0;
            for (std::size_t s = 0; s < logp.size(); ++s) {
              baseline += u.multiplicity[s] * (target[s] - logp[s]);
              kl += u.multiplicity[s] * (logp[s] - target[s]);
            }
            baseline /= S;
            kl /= S;
            std::vector<double> c(logp.size());
            for (std::size_t s = 0; s < logp.size(); ++s) {
              c[s] = -u.multiplicity[s] * ((target[s] - logp[s]) - baseline) / S;
            }
            return c;
          },
          lp);
      if (!std::isfinite(kl)) {
        throw Error(ErrorKind::DivergedLoss, "non-finite KL estimate at t=" + std::to_string(k * hyper.dt));
      }
      over = kl > hyper.diverge_threshold ? over + 1 : 0;
      if (over >= hyper.patience) {
        throw Error(ErrorKind::DivergedLoss, "KL estimate " + std::to_string(kl) + " above " +
                                                 std::to_string(hyper.diverge_threshold) + " for " +
                                                 std::to_string(over) + " epochs at t=" +
                                                 std::to_string(k * hyper.dt));
      }
      model.params().zero_grad();
      if (u.states.size() > 1) {
        tape.backward(loss);
        diff::adamw_step(model.params(), schedule);
      }
    }
    const double t = static_cast<double>(k) * hyper.dt;
    stats.push_back({k, t, kl});
    while (next_save < save_times.size() && step_of(save_times[next_save]) == k) {
      if (on_save) on_save(t, model);
      ++next_save;
    }
  }
  return stats;
}

}  // namespace cmet
