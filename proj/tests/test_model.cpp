#include <doctest.h>

#include <filesystem>

#include "cmet/error.hpp"
#include "cmet/model.hpp"

using namespace cmet;

namespace {

const char* kBirthDeath =
    "species X\nbound 10\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1.0\nrate kd 0.1\ninit X 0\ntime 0 100";

ErrorKind parse_kind(const std::string& text) {
  try {
    parse_model(text);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected a parse error");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("birth-death parses") {
  const ReactionNetwork net = parse_model(kBirthDeath);
  CHECK(net.num_species() == 1);
  CHECK(net.num_reactions() == 2);
  CHECK(net.reactions[0].jump == std::vector<int>{1});
  CHECK(net.reactions[1].jump == std::vector<int>{-1});
  CHECK(net.bounds == std::vector<int>{10});
  CHECK(net.default_rates.at("kd") == doctest::Approx(0.1));
  CHECK(net.t_final == 100.0);
}

TEST_CASE("parse errors") {
  std::string bad = kBirthDeath;
  bad.replace(bad.find("rate kd 0.1"), 11, "rate kd -0.1");
  CHECK(parse_kind(bad) == ErrorKind::NonPositiveRate);
  CHECK(parse_kind("species X\nreaction k : Y -> 0\nrate k 1\n") == ErrorKind::UnknownSpecies);
  CHECK(parse_kind("species X X\n") == ErrorKind::DuplicateSpecies);
  CHECK(parse_kind("species X\nbound 3\nreaction k : X -> 0\n") == ErrorKind::MissingRate);
  CHECK(parse_kind("species X\nfrobnicate\n") == ErrorKind::MalformedLine);

  try {
    parse_model("species X\nbound 3\n\nreaction k X -> 0\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("stoichiometry") {
  const ReactionNetwork net =
      parse_model("species P D\nbound 10\nreaction k : 2 P -> D\nrate k 0.5\ninit P 4\ninit D 0\n");
  const Reaction& r = net.reactions[0];
  REQUIRE(r.reactants.size() == 1);
  CHECK(r.reactants[0] == std::pair<std::size_t, int>{0, 2});
  CHECK(r.jump == std::vector<int>{-2, 1});
  const State x{4, 0};
  CHECK(propensity(net, net.default_rates, x, 0) == doctest::Approx(6.0));
}

TEST_CASE("propensities") {
  const ReactionNetwork net = parse_model(kBirthDeath);
  for (int x = 0; x <= 10; ++x) {
    const State s{x};
    CHECK(propensity(net, net.default_rates, s, 0) == 1.0);
  }
  CHECK(propensity(net, net.default_rates, State{3}, 1) == doctest::Approx(0.3));
  CHECK(propensity(net, net.default_rates, State{0}, 1) == 0.0);
}

TEST_CASE("jumps respect the box") {
  const ReactionNetwork net = parse_model(kBirthDeath);
  CHECK_FALSE(apply_jump(net, State{0}, 1).has_value());
  CHECK(apply_jump(net, State{9}, 0) == State{10});
  CHECK_FALSE(apply_jump(net, State{10}, 0).has_value());
}

TEST_CASE("jump then reverse jump is the identity") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  for (int px = 0; px <= 4; ++px) {
    for (int g = 0; g <= 1; ++g) {
      const State x{g, 1 - g, px, 3};
      for (std::size_t j = 0; j < net.num_reactions(); ++j) {
        const auto y = apply_jump(net, x, j);
        if (!y) continue;
        State back = *y;
        for (std::size_t i = 0; i < back.size(); ++i) back[i] -= net.reactions[j].jump[i];
        CHECK(back == x);
        CHECK(jump_in_bounds(net, *y, j, -1));
      }
    }
  }
}

TEST_CASE("propensity is monotone in reactant counts") {
  const ReactionNetwork net = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  for (std::size_t j = 0; j < net.num_reactions(); ++j) {
    for (std::size_t i = 0; i < net.num_species(); ++i) {
      State x{1, 1, 5, 5};
      for (int v = 0; v < net.bounds[i]; ++v) {
        x[i] = v;
        const double lower = propensity(net, net.default_rates, x, j);
        x[i] = v + 1;
        CHECK(propensity(net, net.default_rates, x, j) >= lower);
      }
    }
  }
}

TEST_CASE("shipped models round-trip through the serializer") {
  for (const auto& entry : std::filesystem::directory_iterator(CMET_MODELS_DIR)) {
    if (entry.path().extension() != ".cme") continue;
    CAPTURE(entry.path().string());
    const ReactionNetwork net = load_model(entry.path().string());
    CHECK_NOTHROW(net.validate());
    CHECK(parse_model(serialize_model(net)) == net);
  }
}

TEST_CASE("shipped model shapes") {
  const auto load = [](const char* name) { return load_model(std::string(CMET_MODELS_DIR) + "/" + name); };
  const ReactionNetwork toggle = load("toggle_switch.cme");
  CHECK(toggle.num_species() == 4);
  CHECK(toggle.num_reactions() == 8);
  CHECK(toggle.bounds == std::vector<int>{1, 1, 32, 32});
  const ReactionNetwork bd = load("birth_death.cme");
  CHECK(bd.num_species() == 1);
  CHECK(bd.num_reactions() == 2);
  CHECK(load("cascade.cme").num_species() == 15);
  CHECK(load("cascade.cme").num_reactions() == 30);
}

TEST_CASE("rate maps") {
  RateMap r{{"a", 1.0}};
  CHECK(r.all_positive());
  r.set("b", 0.0);
  CHECK_FALSE(r.all_positive());
  CHECK_THROWS_AS(r.set("c", -1.0), Error);
  CHECK_THROWS_AS(r.at("missing"), Error);
}
