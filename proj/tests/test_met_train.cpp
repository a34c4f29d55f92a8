#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "cmet/diff/ops.hpp"
#include "cmet/error.hpp"
#include "cmet/met_train.hpp"
#include "cmet/parallel.hpp"
#include "cmet/statespace.hpp"

using namespace cmet;
namespace fs = std::filesystem;

namespace {

ReactionNetwork birth_death(int bound) {
  return parse_model("species X\nbound " + std::to_string(bound) +
                     "\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1\nrate kd 0.1\ninit X 0\ntime 0 100\n");
}

METConfig small() {
  METConfig c;
  c.d_emb = 16;
  c.d_ff = 32;
  c.d_l = 2;
  c.h = 2;
  c.d_p = 4;
  return c;
}

std::vector<double> flat_grad(const diff::ParameterStore& store) {
  std::vector<double> g;
  for (const auto& p : store.all()) g.insert(g.end(), p.grad.data.begin(), p.grad.data.end());
  return g;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double ab = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
  const double aa = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
  const double bb = std::inner_product(b.begin(), b.end(), b.begin(), 0.0);
  return ab / std::sqrt(aa * bb);
}

// Exact gradient of KL(p || q) for one prompt over an enumerable space,
// built directly on the tape from per-state log-probabilities.
std::vector<double> exact_kl_gradient(METModel& m, const Prompt& prompt, const std::vector<State>& states,
                                      const std::vector<double>& log_q) {
  m.params().zero_grad();
  diff::Tape tape;
  diff::Var kl;
  for (std::size_t s = 0; s < states.size(); ++s) {
    std::vector<std::vector<double>> logp;
    diff::Var lp = m.weighted_logprob(
        tape, {prompt}, {{0, {states[s]}}},
        [](const std::vector<std::vector<double>>&, std::vector<std::vector<double>>& c) { c[0][0] = 1.0; }, logp);
    diff::Var term = diff::mul(diff::exp(lp), diff::sub(lp, tape.constant(diff::Tensor::scalar(log_q[s]))));
    kl = s == 0 ? term : diff::add(kl, term);
  }
  tape.backward(kl);
  return flat_grad(m.params());
}

std::vector<double> estimator_gradient(METModel& m, const Prompt& prompt, const std::vector<State>& states,
                                       const std::vector<double>& log_q, const std::vector<double>& mult,
                                       bool baseline) {
  m.params().zero_grad();
  diff::Tape tape;
  const double S = std::accumulate(mult.begin(), mult.end(), 0.0);
  std::vector<std::vector<double>> logp;
  diff::Var loss = m.weighted_logprob(
      tape, {prompt}, {{0, states}},
      [&](const std::vector<std::vector<double>>& lp, std::vector<std::vector<double>>& c) {
        score_coefficients(lp[0], log_q, mult, S, baseline, c[0]);
      },
      logp);
  tape.backward(loss);
  return flat_grad(m.params());
}

}  // namespace

TEST_CASE("score coefficients") {
  const std::vector<double> logp{-1.0, -2.0}, target{-1.5, -1.0}, mult{3.0, 1.0};
  std::vector<double> c;
  const double kl = score_coefficients(logp, target, mult, 4.0, false, c);
  CHECK(kl == doctest::Approx((3 * 0.5 + 1 * -1.0) / 4.0));
  CHECK(c[0] == doctest::Approx(-3.0 * -0.5 / 4.0));
  CHECK(c[1] == doctest::Approx(-1.0 * 1.0 / 4.0));
  score_coefficients(logp, target, mult, 4.0, true, c);
  // the baseline makes the weighted coefficients sum to zero
  CHECK(c[0] + c[1] == doctest::Approx(0.0));
}

TEST_CASE("score-function estimator matches the enumerated KL gradient") {
  const ReactionNetwork net = birth_death(4);
  METModel m(net, small(), 21);
  const Prompt prompt = build_prompt(net, net.default_rates, State{1}, 0.5);
  std::vector<State> states;
  for (int x = 0; x <= 4; ++x) states.push_back({x});
  const std::vector<double> log_q{std::log(0.1), std::log(0.4), std::log(0.3), std::log(0.15), std::log(0.05)};
  const std::vector<double> exact = exact_kl_gradient(m, prompt, states, log_q);

  std::vector<double> p;
  for (const State& s : states) p.push_back(std::exp(m.logprob(prompt, s)));

  SUBCASE("expected multiplicities") {
    std::vector<double> mult;
    for (double v : p) mult.push_back(1e4 * v);
    const auto with = estimator_gradient(m, prompt, states, log_q, mult, true);
    const auto without = estimator_gradient(m, prompt, states, log_q, mult, false);
    CHECK(cosine(with, exact) > 0.999999);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < with.size(); ++i) {
      diff += (with[i] - without[i]) * (with[i] - without[i]);
      norm += without[i] * without[i];
    }
    CHECK(std::sqrt(diff / norm) < 1e-3);
  }
  SUBCASE("sampled batch of 10^4") {
    const auto samples = m.sample(prompt, 10000, 5);
    std::vector<double> mult(5, 0.0);
    for (const State& s : samples) mult[s[0]] += 1.0;
    CHECK(cosine(estimator_gradient(m, prompt, states, log_q, mult, true), exact) > 0.99);
  }
}

TEST_CASE("a delta reward is reproduced") {
  const ReactionNetwork net = birth_death(6);
  // Near-zero rates: the kernel leaves the delta in place.
  const RateMap rates{{"kb", 1e-6}, {"kd", 1e-6}};
  RewardHyper rh;
  rh.hidden = 8;
  RewardModel delta(net.bounds, 8, 3);
  pretrain_delta(delta, {4}, rh);
  std::vector<RewardElement> elements;
  elements.push_back({"delta", rates, {4}, 0.0, 0.01, build_prompt(net, rates, State{4}, 0.01), delta});

  METModel m(net, small(), 4);
  TrainHyper h;
  h.s_batch = 64;
  h.m_acc = 1;
  h.epochs = 300;
  h.schedule = {3e-3, 20, diff::DecayLaw::InverseSqrt};
  h.seed = 8;
  h.diverge_threshold = 1e9;
  train_met(m, elements, net, h);
  CHECK(std::exp(m.logprob(elements[0].prompt, State{4})) > 0.99);
}

TEST_CASE("training is reproducible and independent of the worker count") {
  const ReactionNetwork net = birth_death(6);
  RewardHyper rh;
  rh.hidden = 8;
  rh.batch = 200;
  rh.epochs = 10;
  rh.seed = 1;
  const fs::path dir = fs::temp_directory_path() / "cmet_train_det";
  fs::remove_all(dir);
  RewardModelSet set(dir.string());
  train_reward_grid(net, {{net.default_rates, {0}}, {net.default_rates, {3}}}, {0.05, 0.1}, rh, set);
  const auto elements = load_reward_elements(set, net);
  CHECK(elements.size() == 4);

  TrainHyper h;
  h.s_batch = 50;
  h.m_acc = 3;
  h.epochs = 5;
  h.seed = 9;
  auto run = [&](std::size_t workers) {
    WorkerLimit limit(workers);
    METModel m(net, small(), 2);
    const TrainResult r = train_met(m, elements, net, h);
    return std::pair(r.epoch_kl, m.params().at("head.w").value.data);
  };
  const auto one = run(1);
  CHECK(one == run(1));
  CHECK(one == run(4));
  fs::remove_all(dir);
}

TEST_CASE("KL estimate falls during training") {
  const ReactionNetwork net = birth_death(10);
  RewardHyper rh;
  rh.seed = 3;
  const fs::path dir = fs::temp_directory_path() / "cmet_train_kl";
  fs::remove_all(dir);
  RewardModelSet set(dir.string());
  train_reward_grid(net, {{net.default_rates, {0}}, {net.default_rates, {5}}}, {0.25, 0.5}, rh, set);

  METModel m(net, small(), 7);
  TrainHyper h;
  h.s_batch = 200;
  h.m_acc = 4;
  h.epochs = 300;
  h.schedule = {3e-3, 30, diff::DecayLaw::InverseSqrt};
  h.seed = 4;
  const TrainResult r = train_met(m, set, net, h);
  const auto avg = [&](std::size_t from, std::size_t to) {
    return std::accumulate(r.epoch_kl.begin() + from, r.epoch_kl.begin() + to, 0.0) / static_cast<double>(to - from);
  };
  CHECK(avg(270, 300) < 0.1 * avg(0, 10));
  CHECK(r.trace.size() == 300 * 4);
  fs::remove_all(dir);
}

TEST_CASE("hyperparameter checks") {
  const ReactionNetwork net = birth_death(4);
  METModel m(net, small(), 1);
  TrainHyper h;
  h.s_batch = 1;
  CHECK_THROWS_AS(train_met(m, std::vector<RewardElement>{}, net, h), Error);
  CHECK_THROWS_AS(RewardModelSet::open("/nonexistent/cmet-set"), Error);
}
