#include <doctest.h>

#include <cmath>

#include "cmet/analysis.hpp"
#include "cmet/error.hpp"
#include "cmet/random.hpp"
#include "cmet/statespace.hpp"

using namespace cmet;

namespace {

std::vector<double> random_distribution(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) total += (v = rng.uniform());
  for (double& v : p) v /= total;
  return p;
}

Histogram2D gaussian_peaks(const std::vector<std::pair<double, double>>& centres, double sigma, std::size_t n) {
  std::vector<double> w(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (const auto& [ci, cj] : centres) {
        w[i * n + j] += std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2 * sigma * sigma));
      }
    }
  }
  return Histogram2D::from_weights(0, 1, n, n, std::move(w));
}

}  // namespace

TEST_CASE("hellinger") {
  const std::vector<double> p{0.2, 0.3, 0.5};
  CHECK(hellinger(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(hellinger(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(1.0));
  CHECK(hellinger(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx(std::sqrt(1 - std::sqrt(0.5))));
  try {
    hellinger(p, std::vector<double>{0.5, 0.5});
    FAIL("expected SupportMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SupportMismatch);
  }
}

TEST_CASE("hellinger is a metric on random triples") {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_distribution(rng, 6), q = random_distribution(rng, 6), r = random_distribution(rng, 6);
    CHECK(hellinger(p, q) == doctest::Approx(hellinger(q, p)).epsilon(1e-14));
    CHECK(hellinger(p, r) <= hellinger(p, q) + hellinger(q, r) + 1e-12);
  }
}

TEST_CASE("total variation") {
  CHECK(total_variation(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) == doctest::Approx(0.5));
}

TEST_CASE("bimodality coefficient") {
  Rng rng(3);
  std::vector<double> uniform, normal, twopoint;
  for (int i = 0; i < 200000; ++i) {
    uniform.push_back(rng.uniform());
    normal.push_back(rng.normal());
    twopoint.push_back(rng.uniform() < 0.5 ? -1.0 : 1.0);
  }
  CHECK(bimodality_coefficient(uniform) == doctest::Approx(5.0 / 9.0).epsilon(0.01));
  CHECK(bimodality_coefficient(normal) == doctest::Approx(1.0 / 3.0).epsilon(0.02));
  CHECK(bimodality_coefficient(twopoint) == doctest::Approx(1.0).epsilon(0.001));

  std::vector<double> scaled;
  for (double v : uniform) scaled.push_back(3.5 * v - 7.0);
  CHECK(bimodality_coefficient(scaled) == doctest::Approx(bimodality_coefficient(uniform)).epsilon(1e-9));

  try {
    bimodality_coefficient(std::vector<double>(10, 2.0));
    FAIL("expected DegenerateVariance");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateVariance);
  }
  CHECK_THROWS_AS(bimodality_coefficient(std::vector<double>{1, 2, 3}), Error);
}

TEST_CASE("mode counting") {
  CHECK(mode_count(gaussian_peaks({{10, 12}}, 3.0, 30), 1, 0.01) == 1);
  CHECK(mode_count(gaussian_peaks({{5, 5}, {5, 24}, {24, 5}, {24, 24}}, 2.0, 30), 1, 0.01) == 4);
  // a flat plateau is one mode
  CHECK(mode_count(Histogram2D::from_weights(0, 1, 3, 3, std::vector<double>(9, 1.0)), 0, 0.0) == 1);
  CHECK_THROWS_AS(Histogram2D::from_weights(0, 1, 2, 2, std::vector<double>(4, 0.0)), Error);
}

TEST_CASE("four modes of the toggle switch") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, net.default_rates, space);
  const ProbabilityVector p = evolve_exact(gen, delta_distribution(space, net.default_init), net.t_final);
  const Histogram2D h = Histogram2D::from_weights(2, 3, 33, 33, joint_marginal(space, p.p, 2, 3));
  CHECK(mode_count(h, 1, 0.01) == 4);
}

TEST_CASE("histograms sum to one") {
  TrajectoryEnsemble ens;
  ens.grid = {0.0};
  ens.num_species = 2;
  ens.n_traj = 3;
  ens.states = {0, 1, 2, 2, 0, 1};
  const Histogram2D h = histogram2d(ens, 0, 0, 1, 2, 2);
  double total = 0.0;
  for (double v : h.p) total += v;
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(h.at(0, 1) == doctest::Approx(2.0 / 3.0));
}
