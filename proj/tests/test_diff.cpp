#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "cmet/diff/checkpoint.hpp"
#include "cmet/diff/gradcheck.hpp"
#include "cmet/diff/ops.hpp"
#include "cmet/diff/optim.hpp"
#include "cmet/error.hpp"
#include "cmet/random.hpp"

using namespace cmet;
using namespace cmet::diff;

TEST_CASE("softmax of a constant row is uniform") {
  Tape tape(false);
  const Tensor& s = tape.value(softmax(tape.constant(Tensor({3}, 0.0))));
  for (double v : s.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("masked softmax gives exact zeros") {
  Tape tape(false);
  auto mask = std::make_shared<const std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 1, 0, 1});
  const Tensor& s = tape.value(
      softmax(masked_fill(tape.constant(Tensor({2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8})), mask,
                          -std::numeric_limits<double>::infinity())));
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(s.data[r * 4 + 1] == 0.0);
    CHECK(s.data[r * 4 + 3] == 0.0);
    CHECK(s.data[r * 4] + s.data[r * 4 + 2] == doctest::Approx(1.0));
  }
}

TEST_CASE("identity matmul") {
  Tape tape(false);
  Tensor id({3, 3}, 0.0);
  for (std::size_t i = 0; i < 3; ++i) id.data[i * 3 + i] = 1.0;
  const Tensor a({3, 2}, std::vector<double>{1, -2, 3.5, 4, 0, 6});
  CHECK(tape.value(matmul(tape.constant(id), tape.constant(a))).data == a.data);
}

TEST_CASE("shape mismatch") {
  Tape tape(false);
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 3})));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("gradient of sum of squares") {
  ParameterStore store;
  Parameter& x = store.add("x", Tensor({1}, std::vector<double>{3.0}));
  Tape tape;
  Var v = tape.param(x);
  tape.backward(sum(mul(v, v)));
  CHECK(x.grad.data[0] == doctest::Approx(6.0));
}

TEST_CASE("log-softmax gradient rows sum to zero") {
  ParameterStore store;
  Parameter& a = store.add("a", Tensor({2, 4}, std::vector<double>{0.1, -0.3, 2.0, 0.7, 1.0, 1.0, -1.0, 0.0}));
  Tape tape;
  const std::vector<std::uint32_t> pick{2, 0};
  tape.backward(sum(gather_log_prob(log_softmax(tape.param(a)), pick)));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += a.grad.data[r * 4 + c];
    CHECK(std::abs(s) < 1e-14);
  }
}

TEST_CASE("disconnected loss") {
  Tape tape;
  try {
    tape.backward(sum(tape.constant(Tensor({2}, 1.0))));
    FAIL("expected DisconnectedGraph");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DisconnectedGraph);
  }
}

TEST_CASE("every op passes the finite-difference check") {
  for (std::uint64_t seed : {1u, 2u}) {
    for (const GradCheckReport& r : check_all_ops(seed)) {
      CAPTURE(r.name);
      CAPTURE(r.worst);
      CHECK(r.checked > 0);
      CHECK(r.passed(1e-4));
    }
  }
}

TEST_CASE("forward values are bitwise reproducible") {
  auto run = [] {
    Rng rng(99);
    Tensor a({8, 16}), b({16, 8});
    for (double& v : a.data) v = rng.normal();
    for (double& v : b.data) v = rng.normal();
    Tape tape(false);
    return tape.value(log_softmax(gelu(matmul(tape.constant(a), tape.constant(b))))).data;
  };
  CHECK(run() == run());
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore store;
    store.add("w", Tensor({3}, std::vector<double>{1, 2, 3}));
    adamw_step(store, Schedule{0.1, 0, DecayLaw::Constant});
    CHECK(store.at("w").value.data == std::vector<double>{1, 2, 3});
    CHECK(store.step == 1);
  }
  SUBCASE("one step descends") {
    ParameterStore store;
    Parameter& x = store.add("x", Tensor({1}, std::vector<double>{1.0}));
    Tape tape;
    Var v = tape.param(x);
    tape.backward(sum(mul(v, v)));
    adamw_step(store, Schedule{0.1, 0, DecayLaw::Constant});
    CHECK(store.at("x").value.data[0] < 1.0);
  }
  SUBCASE("quadratic bowl") {
    ParameterStore store;
    store.add("x", Tensor({2}, std::vector<double>{2.0, -1.5}));
    const Tensor centre({2}, std::vector<double>{0.5, 0.25});
    const Tensor weight({2}, std::vector<double>{1.0, 3.0});
    double loss = 0.0;
    for (int step = 0; step < 200; ++step) {
      store.zero_grad();
      Tape tape;
      Var d = sub(tape.param(store.at("x")), tape.constant(centre));
      Var l = sum(mul(mul(d, d), tape.constant(weight)));
      loss = tape.value(l).item();
      tape.backward(l);
      adamw_step(store, Schedule{0.1, 0, DecayLaw::Constant});
    }
    // A decaying schedule settles into the minimum.
    for (int step = 0; step < 2000; ++step) {
      store.zero_grad();
      Tape tape;
      Var d = sub(tape.param(store.at("x")), tape.constant(centre));
      Var l = sum(mul(mul(d, d), tape.constant(weight)));
      loss = tape.value(l).item();
      tape.backward(l);
      adamw_step(store, Schedule{0.05, 0, DecayLaw::InverseSqrt});
    }
    CHECK(loss < 1e-6);
  }
}

TEST_CASE("schedule") {
  const Schedule s{1e-3, 200, DecayLaw::InverseSqrt};
  CHECK(s(0) == doctest::Approx(1e-3 / 200));
  CHECK(s(199) == doctest::Approx(1e-3));
  CHECK(std::abs(s(199) - s(200)) < 1e-5);
  CHECK(s(799) == doctest::Approx(5e-4));
  for (std::size_t step : {0u, 10u, 1000u, 1000000u}) CHECK(s(step) > 0.0);
  CHECK(parse_decay_law("constant") == DecayLaw::Constant);
  CHECK_THROWS_AS(parse_decay_law("cosine"), Error);
}

TEST_CASE("gradient clipping") {
  ParameterStore store;
  Parameter& p = store.add("p", Tensor({2}));
  p.grad.data = {3.0, 4.0};
  CHECK(clip_grad_norm(store, 1.0) == doctest::Approx(5.0));
  CHECK(store.grad_norm() == doctest::Approx(1.0));
}

TEST_CASE("checkpoint round trip") {
  const std::string path = (std::filesystem::temp_directory_path() / "cmet_diff_ckpt.bin").string();
  ParameterStore store;
  store.add("a", Tensor({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6}));
  store.add("b", Tensor({1}, std::vector<double>{-0.5}));
  store.at("a").first_moment.data[4] = 0.25;
  store.step = 17;
  save_checkpoint(path, store, {{"kind", "test"}}, true);

  ParameterStore other;
  other.add("a", Tensor({2, 3}));
  other.add("b", Tensor({1}));
  load_checkpoint(path, other);
  CHECK(other.at("a").value.data == store.at("a").value.data);
  CHECK(other.at("b").value.data == store.at("b").value.data);
  CHECK(other.at("a").first_moment.data[4] == 0.25);
  CHECK(other.step == 17);
  CHECK(read_checkpoint_metadata(path)["kind"] == "test");
  CHECK(read_checkpoint(path).count("a@v") == 1);

  ParameterStore wrong;
  wrong.add("a", Tensor({3, 2}));
  wrong.add("b", Tensor({1}));
  CHECK_THROWS_AS(load_checkpoint(path, wrong), Error);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".json");
}

TEST_CASE("duplicate parameter names") {
  ParameterStore store;
  store.add("w", Tensor({1}));
  CHECK_THROWS_AS(store.add("w", Tensor({1})), Error);
}
