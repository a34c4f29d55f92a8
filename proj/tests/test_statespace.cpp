#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cmet/error.hpp"
#include "cmet/model.hpp"
#include "cmet/statespace.hpp"

using namespace cmet;

namespace {

ReactionNetwork birth_death(int bound, double kb = 1.0, double kd = 0.1) {
  ReactionNetwork net = parse_model("species X\nbound " + std::to_string(bound) +
                                    "\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1\nrate kd 0.1\n");
  net.default_rates.set("kb", kb);
  net.default_rates.set("kd", kd);
  return net;
}

double poisson(double lambda, int k) { return std::exp(k * std::log(lambda) - lambda - std::lgamma(k + 1.0)); }

}  // namespace

TEST_CASE("mixed-radix enumeration") {
  const TruncatedStateSpace space({2, 3, 1});
  CHECK(space.size() == 24);
  for (std::size_t i = 0; i < space.size(); ++i) CHECK(space.encode(space.decode(i)) == i);
  CHECK(space.decode(1) == State{1, 0, 0});
  CHECK(space.decode(3) == State{0, 1, 0});
}

TEST_CASE("three-state birth-death generator") {
  const ReactionNetwork net = birth_death(2);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  // Hand-enumerated chain 0 <-> 1 <-> 2: column mu holds flows out of mu.
  const std::vector<double> expected{-1.0, 0.1, 0.0,   //
                                     1.0,  -1.1, 0.2,  //
                                     0.0,  1.0, -0.2};
  const std::vector<double> dense = gen.to_dense();
  for (std::size_t i = 0; i < 9; ++i) CHECK(dense[i] == doctest::Approx(expected[i]).epsilon(1e-14));
}

TEST_CASE("generator columns sum to zero") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  double worst = 0.0;
  for (std::size_t c = 0; c < gen.dimension(); ++c) worst = std::max(worst, std::abs(gen.column_sum(c)));
  CHECK(worst < 1e-12);
}

TEST_CASE("zero rates give the zero generator") {
  ReactionNetwork net = birth_death(5, 0.0, 0.0);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  for (double v : gen.to_dense()) CHECK(v == 0.0);
}

TEST_CASE("space cap") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  const TruncatedStateSpace space(net.bounds);
  try {
    build_generator(net, net.default_rates, space, 1000);
    FAIL("expected SpaceTooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpaceTooLarge);
  }
}

TEST_CASE("overflowing enumeration") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/cascade.cme");
  try {
    TruncatedStateSpace space(net.bounds);
    FAIL("expected SpaceTooLarge");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SpaceTooLarge);
  }
}

TEST_CASE("exact evolution matches the Poisson solution") {
  const ReactionNetwork net = birth_death(64);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const ProbabilityVector p0 = delta_distribution(space, State{0});
  for (double t : {1.0, 5.0, 10.0}) {
    const ProbabilityVector pt = evolve_exact(gen, p0, t);
    const double lambda = 10.0 * (1.0 - std::exp(-0.1 * t));
    double worst = 0.0;
    for (int k = 0; k <= 64; ++k) worst = std::max(worst, std::abs(pt.p[k] - poisson(lambda, k)));
    CHECK(worst < 1e-8);
    CHECK(std::abs(pt.total() - 1.0) < 1e-9);
  }
}

TEST_CASE("evolution identities") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/gene_expression.cme");
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const ProbabilityVector p0 = delta_distribution(space, net.default_init);

  SUBCASE("t = 0 is the identity") {
    const ProbabilityVector p = evolve_exact(gen, p0, 0.0);
    CHECK(p.p == p0.p);
  }
  SUBCASE("semigroup") {
    const ProbabilityVector direct = evolve_exact(gen, p0, 2.5);
    const ProbabilityVector split = evolve_exact(gen, evolve_exact(gen, p0, 1.0), 1.5);
    double worst = 0.0;
    for (std::size_t i = 0; i < direct.p.size(); ++i) worst = std::max(worst, std::abs(direct.p[i] - split.p[i]));
    CHECK(worst < 1e-8);
  }
  SUBCASE("stationary input is a fixed point") {
    const ProbabilityVector far = evolve_exact(gen, p0, 200.0);
    const ProbabilityVector again = evolve_exact(gen, far, 3.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < far.p.size(); ++i) worst = std::max(worst, std::abs(far.p[i] - again.p[i]));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("kernel at a state") {
  const ReactionNetwork net = birth_death(10);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const std::vector<double> dense = gen.to_dense();
  const std::size_t n = space.size();

  SUBCASE("dt = 0 returns p(x)") {
    const LogProbFn logp = [](std::span<const int> x) { return -0.1 * x[0] - 1.0; };
    for (int x = 0; x <= 10; ++x) {
      CHECK(apply_kernel_at_state(net, net.default_rates, 0.0, logp, State{x}) == std::exp(-0.1 * x - 1.0));
    }
  }
  SUBCASE("uniform input against the dense product") {
    const LogProbFn logp = [n](std::span<const int>) { return -std::log(static_cast<double>(n)); };
    const double dt = 0.05;
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double oracle = 1.0 / n;
      for (std::size_t c = 0; c < n; ++c) oracle += dt * dense[r * n + c] / n;
      const double v = apply_kernel_at_state(net, net.default_rates, dt, logp, space.decode(r));
      CHECK(std::abs(v - oracle) < 1e-12);
      total += v;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  SUBCASE("stationary input is preserved") {
    const ProbabilityVector stat = evolve_exact(gen, delta_distribution(space, State{0}), 400.0);
    const LogProbFn logp = [&](std::span<const int> x) { return std::log(stat.p[space.encode(x)]); };
    for (int x = 0; x <= 10; ++x) {
      CHECK(std::abs(apply_kernel_at_state(net, net.default_rates, 1e-2, logp, State{x}) - stat.p[x]) < 1e-6);
    }
  }
  SUBCASE("unstable step") {
    const LogProbFn logp = [](std::span<const int>) { return 0.0; };
    try {
      apply_kernel_at_state(net, net.default_rates, 1.0, logp, State{5});
      FAIL("expected UnstableStep");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnstableStep);
    }
  }
  SUBCASE("batched targets agree with single evaluations") {
    const LogProbFn logp = [](std::span<const int> x) { return -0.3 * x[0]; };
    const BatchLogProbFn batch = [&](const std::vector<State>& xs) {
      std::vector<double> out;
      for (const State& x : xs) out.push_back(logp(x));
      return out;
    };
    const std::vector<State> states{{0}, {3}, {10}, {3}};
    const std::vector<double> t = kernel_log_targets(net, net.default_rates, 0.02, batch, states);
    for (std::size_t i = 0; i < states.size(); ++i) {
      CHECK(t[i] == doctest::Approx(std::log(apply_kernel_at_state(net, net.default_rates, 0.02, logp, states[i]))));
    }
  }
}

TEST_CASE("exact kernel table matches evolve_exact") {
  const ReactionNetwork net = birth_death(10);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const ProbabilityVector p0 = evolve_exact(gen, delta_distribution(space, State{2}), 0.7);
  const BatchLogProbFn logp = [&](const std::vector<State>& xs) {
    std::vector<double> out;
    for (const State& x : xs) out.push_back(std::log(p0.p[space.encode(x)]));
    return out;
  };
  const std::vector<double> table = exact_kernel_log_table(net, net.default_rates, 0.3, logp);
  const ProbabilityVector p1 = evolve_exact(gen, p0, 0.3);
  for (std::size_t i = 0; i < space.size(); ++i) CHECK(std::exp(table[i]) == doctest::Approx(p1.p[i]).epsilon(1e-9));
}

TEST_CASE("probability CSV round trip") {
  const ReactionNetwork net = birth_death(6);
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const ProbabilityVector p = evolve_exact(gen, delta_distribution(space, State{0}), 2.0);
  const std::string path = (std::filesystem::temp_directory_path() / "cmet_prob_roundtrip.csv").string();
  write_probability_csv(path, space, net.species_names(), p);
  const ProbabilityVector back = read_probability_csv(path, space, 2.0);
  for (std::size_t i = 0; i < p.p.size(); ++i) CHECK(back.p[i] == doctest::Approx(p.p[i]).epsilon(1e-12));
  std::filesystem::remove(path);
}

TEST_CASE("marginals") {
  const TruncatedStateSpace space({1, 2});
  std::vector<double> p(space.size(), 1.0 / 6.0);
  const std::vector<double> m = marginal(space, p, 1);
  CHECK(m.size() == 3);
  for (double v : m) CHECK(v == doctest::Approx(1.0 / 3.0));
  const std::vector<double> j = joint_marginal(space, p, 1, 0);
  CHECK(j.size() == 6);
}
