#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cmet/error.hpp"
#include "cmet/parallel.hpp"
#include "cmet/tasks.hpp"

using namespace cmet;
namespace fs = std::filesystem;

namespace {

ReactionNetwork birth_death(int bound = 10) {
  return parse_model("species X\nbound " + std::to_string(bound) +
                     "\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1\nrate kd 0.1\ninit X 0\ntime 0 100\n");
}

METConfig tiny() {
  METConfig c;
  c.d_emb = 8;
  c.d_ff = 12;
  c.d_l = 2;
  c.h = 2;
  c.d_p = 3;
  return c;
}

}  // namespace

TEST_CASE("sweep cells are seeded by their rates") {
  const ReactionNetwork net = birth_death(30);
  const StateSampler sampler = ssa_sampler(net, {0}, 5.0);
  const SweepAxis a{"kb", {0.5, 2.0, 0.5}};
  const SweepAxis b{"kd", {0.1, 0.3}};
  const auto cells = sweep_bimodality(sampler, net.default_rates, a, b, 0, 400, 17);
  REQUIRE(cells.size() == 6);
  CHECK(cells[1].a == 0.5);
  CHECK(cells[1].b == 0.3);
  // row 0 and row 2 are the same grid points
  CHECK(cells[0].coefficient == cells[4].coefficient);
  CHECK(cells[1].coefficient == cells[5].coefficient);
  CHECK(cells[0].coefficient.has_value());
  CHECK(cells[0].coefficient != cells[2].coefficient);
  CHECK(sweep_bimodality(sampler, net.default_rates, a, b, 0, 400, 17)[3].coefficient == cells[3].coefficient);
}

TEST_CASE("cells without spread are left empty") {
  const ReactionNetwork net = birth_death();
  const auto cells = sweep_bimodality(ssa_sampler(net, {4}, 1.0), net.default_rates, {"kb", {0.0, 1.0}},
                                      {"kd", {0.0}}, 0, 100, 3);
  REQUIRE(cells.size() == 2);
  CHECK_FALSE(cells[0].coefficient.has_value());
  CHECK(cells[1].coefficient.has_value());

  const fs::path path = fs::temp_directory_path() / "cmet_sweep.csv";
  write_sweep_csv(path.string(), {"kb", {0.0, 1.0}}, {"kd", {0.0}}, cells);
  std::ifstream in(path);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  CHECK(header == "kb,kd,coefficient");
  CHECK(first.back() == ',');
  fs::remove(path);
}

TEST_CASE("the MET sampler draws from the model") {
  const ReactionNetwork net = birth_death();
  const METModel m(net, tiny(), 2);
  const StateSampler s = met_sampler(m, net, {3}, 1.0);
  CHECK(s(net.default_rates, 50, 4) == m.sample(build_prompt(net, net.default_rates, State{3}, 1.0), 50, 4));
}

TEST_CASE("rate inference") {
  const ReactionNetwork net = birth_death();
  const METModel m(net, tiny(), 5);
  const TrajectoryEnsemble data = simulate(net, net.default_rates, {0}, {0.0, 1.0, 2.0, 3.0}, 20, 9);
  InferenceOptions opt;
  opt.steps = 30;
  opt.batch = 40;
  opt.seed = 6;
  const RateMap start{{"kb", 1.0}, {"kd", 0.3}};

  SUBCASE("a zero-width proposal never moves") {
    InferenceOptions still = opt;
    still.proposal_std = 0.0;
    const InferenceChain c = infer_rates(m, net, data, start, {"kd"}, still);
    CHECK(c.acceptance_count() == 0);
    for (const RateMap& r : c.visited) CHECK(r == start);
  }
  SUBCASE("chains are reproducible and keep fixed rates fixed") {
    const InferenceChain c = infer_rates(m, net, data, start, {"kd"}, opt);
    CHECK(c.visited.size() == opt.steps + 1);
    CHECK(c.accepted.size() == opt.steps);
    CHECK(c.score.size() == opt.steps);
    std::size_t moves = 0;
    for (std::size_t k = 0; k < opt.steps; ++k) {
      moves += c.visited[k + 1] != c.visited[k];
      CHECK(c.visited[k + 1].at("kb") == 1.0);
    }
    CHECK(moves == c.acceptance_count());
    const InferenceChain again = infer_rates(m, net, data, start, {"kd"}, opt);
    CHECK(again.visited == c.visited);
    CHECK(again.score == c.score);
    {
      WorkerLimit one(1);
      CHECK(infer_rates(m, net, data, start, {"kd"}, opt).visited == c.visited);
    }
    CHECK(c.estimate().at("kb") == 1.0);
  }
  SUBCASE("several free rates stay positive") {
    const InferenceChain c = infer_rates(m, net, data, start, {"kb", "kd"}, opt);
    CHECK(c.symbols == std::vector<std::string>{"kb", "kd"});
    for (const RateMap& r : c.visited) {
      CHECK(r.at("kb") > 0.0);
      CHECK(r.at("kd") > 0.0);
    }
  }
  SUBCASE("unknown symbols are rejected") {
    CHECK_THROWS_AS(infer_rates(m, net, data, start, {"kz"}, opt), Error);
  }

  const fs::path path = fs::temp_directory_path() / "cmet_chain.csv";
  write_chain_csv(path.string(), infer_rates(m, net, data, start, {"kd"}, opt));
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,accepted,score,kd");
  fs::remove(path);
}

TEST_CASE("iterative trajectories") {
  const ReactionNetwork net = birth_death();
  const METModel m(net, tiny(), 8);
  const TrajectoryEnsemble a = sample_trajectories_iterative(m, net, net.default_rates, {2}, 0.5, 6, 40, 11);
  CHECK(a.grid.size() == 7);
  CHECK(a.grid[6] == doctest::Approx(3.0));
  CHECK(a.n_traj == 40);
  for (std::size_t k = 0; k < a.n_traj; ++k) CHECK(a.at(k, 0)[0] == 2);
  for (std::int32_t v : a.states) {
    CHECK(v >= 0);
    CHECK(v <= 10);
  }
  {
    WorkerLimit one(1);
    CHECK(sample_trajectories_iterative(m, net, net.default_rates, {2}, 0.5, 6, 40, 11) == a);
  }
  // the first trajectories do not depend on how many are drawn
  const TrajectoryEnsemble fewer = sample_trajectories_iterative(m, net, net.default_rates, {2}, 0.5, 6, 10, 11);
  for (std::size_t k = 0; k < 10; ++k) {
    for (std::size_t t = 0; t < 7; ++t) CHECK(fewer.at(k, t)[0] == a.at(k, t)[0]);
  }
  CHECK(sample_trajectories_iterative(m, net, net.default_rates, {2}, 0.5, 6, 40, 12) != a);
}
