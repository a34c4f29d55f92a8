#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cmet/analysis.hpp"
#include "cmet/error.hpp"
#include "cmet/parallel.hpp"
#include "cmet/ssa.hpp"
#include "cmet/statespace.hpp"

using namespace cmet;
namespace fs = std::filesystem;

namespace {

ReactionNetwork birth_death(int bound = 40) {
  return parse_model("species X\nbound " + std::to_string(bound) +
                     "\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1\nrate kd 0.1\ninit X 0\ntime 0 100\n");
}

std::vector<double> exact_marginal(const ReactionNetwork& net, const State& x0, double t) {
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  return marginal(space, evolve_exact(gen, delta_distribution(space, x0), t).p, 0);
}

}  // namespace

TEST_CASE("zero rates keep every trajectory at x0") {
  const ReactionNetwork net = birth_death();
  const TrajectoryEnsemble ens = simulate(net, RateMap{{"kb", 0.0}, {"kd", 0.0}}, {7}, {0.0, 1.0, 5.0}, 20, 3);
  for (std::int32_t v : ens.states) CHECK(v == 7);
}

TEST_CASE("pure death mean") {
  const ReactionNetwork net =
      parse_model("species X\nbound 20\nreaction kd : X -> 0\nrate kd 0.1\ninit X 20\n");
  const TrajectoryEnsemble ens = simulate(net, net.default_rates, {20}, {10.0}, 10000, 5);
  const double mean = ensemble_mean(ens, 0)[0];
  const double p = std::exp(-1.0);
  const double se = std::sqrt(20 * p * (1 - p) / 10000.0);
  CHECK(std::abs(mean - 20 * p) < 3 * se);
}

TEST_CASE("birth-death marginal against the exact solution") {
  const ReactionNetwork net = birth_death();
  const std::vector<double> exact = exact_marginal(net, {0}, 10.0);
  const TrajectoryEnsemble big = simulate(net, net.default_rates, {0}, {10.0}, 10000, 1);
  CHECK(hellinger(marginals_at(big, 0, 0, 40), exact) < 0.05);

  // more trajectories, closer estimate
  const TrajectoryEnsemble small = simulate(net, net.default_rates, {0}, {10.0}, 100, 1);
  CHECK(total_variation(marginals_at(big, 0, 0, 40), exact) < total_variation(marginals_at(small, 0, 0, 40), exact));
}

TEST_CASE("states stay inside the box") {
  const ReactionNetwork net = birth_death(5);
  const TrajectoryEnsemble ens = simulate(net, net.default_rates, {0}, {10.0, 50.0, 100.0}, 500, 2);
  for (std::int32_t v : ens.states) {
    CHECK(v >= 0);
    CHECK(v <= 5);
  }
}

TEST_CASE("ensembles do not depend on the worker count") {
  const ReactionNetwork net = birth_death();
  TrajectoryEnsemble a, b;
  {
    WorkerLimit one(1);
    a = simulate(net, net.default_rates, {0}, {1.0, 2.0, 3.0}, 300, 42);
  }
  {
    WorkerLimit four(4);
    b = simulate(net, net.default_rates, {0}, {1.0, 2.0, 3.0}, 300, 42);
  }
  CHECK(a == b);
  CHECK(a != simulate(net, net.default_rates, {0}, {1.0, 2.0, 3.0}, 300, 43));
}

TEST_CASE("marginals and moments") {
  const ReactionNetwork net = birth_death();
  const TrajectoryEnsemble one = simulate(net, net.default_rates, {3}, {0.0}, 1, 1);
  const std::vector<double> m = marginals_at(one, 0, 0, 40);
  CHECK(m[3] == 1.0);

  const TrajectoryEnsemble ens = simulate(net, net.default_rates, {0}, {2.0, 4.0}, 2000, 7);
  for (std::size_t t = 0; t < 2; ++t) {
    const std::vector<double> marg = marginals_at(ens, t, 0, 40);
    double mean = 0.0, total = 0.0;
    for (int v = 0; v <= 40; ++v) {
      mean += v * marg[v];
      total += marg[v];
    }
    CHECK(total == doctest::Approx(1.0));
    CHECK(mean == doctest::Approx(ensemble_mean(ens, t)[0]));
    // independent tally
    std::vector<double> tally(41, 0.0);
    for (std::size_t k = 0; k < ens.n_traj; ++k) tally[ens.at(k, t)[0]] += 1.0;
    for (int v = 0; v <= 40; ++v) CHECK(marg[v] == doctest::Approx(tally[v] / 2000.0));
  }
  try {
    marginals_at(ens, 2, 0, 40);
    FAIL("expected TimeIndexOutOfRange");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TimeIndexOutOfRange);
  }
}

TEST_CASE("binary and CSV persistence") {
  const ReactionNetwork net = birth_death();
  const TrajectoryEnsemble ens = simulate(net, net.default_rates, {0}, {0.5, 1.0}, 10, 3);
  const fs::path dir = fs::temp_directory_path() / "cmet_ssa_io";
  fs::create_directories(dir);
  write_ensemble((dir / "e.bin").string(), ens);
  CHECK(read_ensemble((dir / "e.bin").string()) == ens);
  write_ensemble_csv((dir / "e.csv").string(), ens, net.species_names());
  std::ifstream in(dir / "e.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "trajectory,time,X");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  CHECK(rows == 20);
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTANENSEMBLE";
  }
  CHECK_THROWS_AS(read_ensemble((dir / "bad.bin").string()), Error);
  fs::remove_all(dir);
}
