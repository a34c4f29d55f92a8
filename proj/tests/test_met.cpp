#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cmet/diff/checkpoint.hpp"
#include "cmet/diff/gradcheck.hpp"
#include "cmet/error.hpp"
#include "cmet/met.hpp"
#include "cmet/statespace.hpp"

using namespace cmet;
namespace fs = std::filesystem;

namespace {

ReactionNetwork birth_death(int bound = 10) {
  return parse_model("species X\nbound " + std::to_string(bound) +
                     "\nreaction kb : 0 -> X\nreaction kd : X -> 0\nrate kb 1\nrate kd 0.1\ninit X 0\ntime 0 100\n");
}

ReactionNetwork three_species(int bound) {
  return parse_model("species A B C\nbound " + std::to_string(bound) +
                     "\nreaction k1 : 0 -> A\nreaction k2 : A -> B\nreaction k3 : B -> C\nreaction k4 : C -> 0\n"
                     "rate k1 1\nrate k2 0.5\nrate k3 2\nrate k4 0.3\ninit A 0\ninit B 0\ninit C 0\n");
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

TEST_CASE("prompt construction") {
  const ReactionNetwork net = birth_death();
  const Prompt p = build_prompt(net, net.default_rates, State{0}, 2.0);
  REQUIRE(p.values.size() == 4);
  CHECK(p.values[0] == 0.0);
  CHECK(p.values[1] == doctest::Approx(std::log(0.1)));
  CHECK(p.values[2] == 0.0);
  CHECK(p.values[3] == 2.0);

  const Prompt e = build_prompt(net, RateMap{{"kb", std::exp(1.0)}, {"kd", 1.0}}, State{3}, 0.0);
  CHECK(e.values[0] == 1.0);

  const ReactionNetwork toggle = load_model(std::string(CMET_MODELS_DIR) + "/toggle_switch.cme");
  CHECK(build_prompt(toggle, toggle.default_rates, toggle.default_init, 1.0).values.size() == 13);

  try {
    build_prompt(net, RateMap{{"kb", 1.0}, {"kd", 0.0}}, State{0}, 1.0);
    FAIL("expected NonPositiveRate");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::NonPositiveRate);
  }
  CHECK_THROWS_AS(build_prompt(net, net.default_rates, State{0}, -1.0), Error);
  CHECK_THROWS_AS(build_prompt(net, net.default_rates, State{0, 1}, 1.0), Error);
}

TEST_CASE("config validation") {
  METConfig c = tiny();
  c.h = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.d_p = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(METConfig::from_json(tiny().to_json()).d_ff == 12);
}

TEST_CASE("joint mass is one") {
  const ReactionNetwork net = birth_death(10);
  const METModel m(net, tiny(), 3);
  const Prompt p = build_prompt(net, net.default_rates, State{2}, 1.5);
  double total = 0.0;
  for (int x = 0; x <= 10; ++x) total += std::exp(m.logprob(p, State{x}));
  CHECK(std::abs(total - 1.0) < 1e-6);

  const ReactionNetwork net3 = three_species(3);
  const METModel m3(net3, tiny(), 4);
  const Prompt p3 = build_prompt(net3, net3.default_rates, State{1, 0, 2}, 0.5);
  const TruncatedStateSpace space(net3.bounds);
  total = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) total += std::exp(m3.logprob(p3, space.decode(i)));
  CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("conditionals: normalization, causality, prompt dependence") {
  const ReactionNetwork net = three_species(4);
  const METModel m(net, tiny(), 5);
  const Prompt p = build_prompt(net, net.default_rates, State{0, 1, 2}, 0.7);
  const State x{1, 3, 2};
  const auto base = m.conditionals(p, x);
  REQUIRE(base.size() == 3);
  for (const auto& c : base) {
    double s = 0.0;
    for (double v : c) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    State y = x;
    y[j] = (y[j] + 2) % 5;
    const auto changed = m.conditionals(p, y);
    for (std::size_t i = 0; i <= j; ++i) CHECK(changed[i] == base[i]);
  }
  Prompt q = p;
  q.values.back() = 1.7;
  const auto moved = m.conditionals(q, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(moved[i] != base[i]);
}

TEST_CASE("batched log-probabilities match single evaluations") {
  const ReactionNetwork net = three_species(4);
  const METModel m(net, tiny(), 6);
  std::vector<Prompt> prompts;
  for (int k = 0; k < 3; ++k) prompts.push_back(build_prompt(net, net.default_rates, State{k, 0, 1}, 0.5 * k));
  prompts.push_back(prompts[0]);
  std::vector<METModel::Item> items;
  const TruncatedStateSpace space(net.bounds);
  // enough distinct rows to cross the inference chunk size
  for (std::size_t i = 0; i < space.size(); ++i) {
    items.push_back({static_cast<std::uint32_t>(i % prompts.size()), space.decode(i)});
  }
  const std::vector<double> lp = m.logprob(prompts, items);
  for (std::size_t k = 0; k < items.size(); k += 7) {
    CHECK(lp[k] == doctest::Approx(m.logprob(prompts[items[k].prompt], items[k].state)).epsilon(1e-12));
  }
}

TEST_CASE("sampling") {
  const ReactionNetwork net = three_species(3);
  const METModel m(net, tiny(), 7);
  const Prompt a = build_prompt(net, net.default_rates, State{0, 0, 0}, 1.0);
  const Prompt b = build_prompt(net, net.default_rates, State{3, 3, 3}, 2.0);
  CHECK(m.sample(a, 300, 11) == m.sample(a, 300, 11));
  // a prompt's draws do not depend on the rest of the batch
  const auto alone = m.sample_batch({a}, 50, 13);
  const auto together = m.sample_batch({a, b, a}, 50, 13);
  CHECK(together[0] == alone[0]);
  CHECK(together[2] != together[0]);

  SUBCASE("frequencies follow the model") {
    const ReactionNetwork bd = birth_death(4);
    const METModel m1(bd, tiny(), 8);
    const Prompt p = build_prompt(bd, bd.default_rates, State{1}, 1.0);
    const auto s = m1.sample(p, 50000, 2);
    std::vector<double> freq(5, 0.0);
    for (const State& x : s) freq[x[0]] += 1.0 / s.size();
    for (int v = 0; v <= 4; ++v) CHECK(std::abs(freq[v] - std::exp(m1.logprob(p, State{v}))) < 0.01);
  }
}

TEST_CASE("parameter count") {
  const ReactionNetwork net = birth_death();
  METConfig ref;  // d_emb 64, d_ff 1024, d_l 8, h 8
  const std::size_t n = parameter_count(ref, net);
  CHECK(n >= 300000);
  CHECK(n <= 500000);

  METConfig deeper = ref;
  deeper.d_l = 16;
  const std::size_t d = ref.d_emb, f = ref.mlp_width();
  const std::size_t per_block = 4 * d + 3 * d * d + 3 * d + d * d + d + 2 * d * f + f + d;
  CHECK(parameter_count(deeper, net) - n == 8 * per_block);

  const METModel m(net, tiny(), 1);
  CHECK(m.params().element_count() == parameter_count(tiny(), net));

  const fs::path path = fs::temp_directory_path() / "cmet_met_count.ckpt";
  m.save(path.string());
  std::size_t stored = 0;
  for (const auto& [name, t] : diff::read_checkpoint(path.string())) stored += t.size();
  CHECK(stored == parameter_count(tiny(), net));
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("save and load") {
  const ReactionNetwork net = three_species(3);
  METModel m(net, tiny(), 9);
  PromptNorm norm = PromptNorm::identity(m.prompt_length());
  norm.shift[0] = 0.3;
  norm.scale[7] = 2.0;
  m.set_norm(norm);
  const fs::path path = fs::temp_directory_path() / "cmet_met_rt.ckpt";
  m.save(path.string(), {{"note", "x"}});
  const METModel back = METModel::load(path.string(), net);
  const Prompt p = build_prompt(net, net.default_rates, State{1, 2, 3}, 0.25);
  CHECK(back.logprob(p, State{2, 2, 1}) == m.logprob(p, State{2, 2, 1}));
  CHECK(back.norm().scale == norm.scale);
  CHECK_THROWS_AS(METModel::load(path.string(), birth_death()), Error);
  fs::remove(path);
  fs::remove(path.string() + ".json");
}

TEST_CASE("prompt normalization") {
  std::vector<Prompt> ps{{{1.0, 5.0, 2.0}}, {{3.0, 5.0, 4.0}}};
  const PromptNorm n = PromptNorm::fit(ps);
  CHECK(n.shift == std::vector<double>{2.0, 5.0, 3.0});
  CHECK(n.scale[1] == 1.0);
  const std::vector<double> z = n.apply(ps[0]);
  CHECK(z[0] == doctest::Approx(-1.0));
  CHECK(z[1] == 0.0);
}

TEST_CASE("full log-probability passes the finite-difference check") {
  const ReactionNetwork net = three_species(3);
  METModel m(net, tiny(), 10);
  std::vector<Prompt> prompts{build_prompt(net, net.default_rates, State{0, 1, 2}, 0.4),
                              build_prompt(net, net.default_rates, State{3, 0, 0}, 1.1)};
  std::vector<METModel::Group> groups{{0, {{0, 0, 0}, {1, 2, 3}, {3, 3, 1}}}, {1, {{0, 1, 0}, {2, 0, 3}}}};
  const diff::ScalarFn f = [&](diff::Tape& tape) {
    std::vector<std::vector<double>> logp;
    return m.weighted_logprob(
        tape, prompts, groups,
        [](const std::vector<std::vector<double>>& lp, std::vector<std::vector<double>>& c) {
          for (std::size_t g = 0; g < lp.size(); ++g) {
            for (std::size_t s = 0; s < lp[g].size(); ++s) c[g][s] = 0.5 + 0.25 * static_cast<double>(g + s);
          }
        },
        logp);
  };
  diff::GradCheckOptions opt;
  opt.max_per_param = 6;
  opt.seed = 3;
  const diff::GradCheckReport r = diff::check_gradients("met", m.params(), f, opt);
  CAPTURE(r.worst);
  CHECK(r.checked > 100);
  CHECK(r.passed(1e-4));
}
