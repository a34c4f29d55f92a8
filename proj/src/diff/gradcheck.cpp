#include "cmet/diff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "cmet/diff/ops.hpp"
#include "cmet/random.hpp"

namespace cmet::diff {

namespace {

double evaluate(const ScalarFn& f) {
  Tape tape(false);
  return tape.value(f(tape)).item();
}

}  // namespace

GradCheckReport check_gradients(const std::string& name, ParameterStore& store, const ScalarFn& f,
                                const GradCheckOptions& options) {
  store.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  GradCheckReport report;
  report.name = name;
  Rng rng(options.seed);
  for (Parameter& p : store.all()) {
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (options.max_per_param > 0 && idx.size() > options.max_per_param) {
      for (std::size_t i = 0; i < options.max_per_param; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      idx.resize(options.max_per_param);
    }
    for (std::size_t i : idx) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + options.eps;
      const double up = evaluate(f);
      p.value.data[i] = saved - options.eps;
      const double down = evaluate(f);
      p.value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = p.grad.data[i];
      const double abs_err = std::abs(analytic - numeric);
      const double rel = abs_err / std::max({std::abs(analytic), std::abs(numeric), options.floor});
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst = p.name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  store.zero_grad();
  return report;
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Reduces an op's output to a scalar through fixed random weights so every
// output entry contributes a distinct amount.
Var project(Var out, const std::shared_ptr<const Tensor>& w) { return weighted_sum(out, w); }

struct Case {
  std::string name;
  ParameterStore store;
  ScalarFn f;
};

}  // namespace

std::vector<GradCheckReport> check_all_ops(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(seed);
  std::vector<std::unique_ptr<Case>> cases;
  auto make = [&](const std::string& name, std::vector<std::pair<std::string, Tensor>> inputs, Shape out_shape,
                  std::function<Var(Tape&, std::vector<Var>&)> op) {
    auto c = std::make_unique<Case>();
    c->name = name;
    for (auto& [n, t] : inputs) c->store.add(n, std::move(t));
    auto w = std::make_shared<const Tensor>(random_tensor(rng, std::move(out_shape)));
    ParameterStore* store = &c->store;
    c->f = [store, w, op](Tape& tape) {
      std::vector<Var> in;
      for (Parameter& p : store->all()) in.push_back(tape.param(p));
      return project(op(tape, in), w);
    };
    cases.push_back(std::move(c));
  };

  make("matmul", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4, 5})}}, {3, 5},
       [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); });
  make("bmm", {{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {2, 4, 2})}}, {2, 3, 2},
       [](Tape&, std::vector<Var>& v) { return bmm(v[0], v[1]); });
  make("bmm_nt", {{"a", random_tensor(rng, {2, 3, 4})}, {"b", random_tensor(rng, {2, 5, 4})}}, {2, 3, 5},
       [](Tape&, std::vector<Var>& v) { return bmm_nt(v[0], v[1]); });
  make("linear",
       {{"x", random_tensor(rng, {2, 3, 4})}, {"w", random_tensor(rng, {4, 3})}, {"b", random_tensor(rng, {3})}},
       {2, 3, 3}, [](Tape&, std::vector<Var>& v) { return linear(v[0], v[1], v[2]); });
  make("add", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {3, 4})}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); });
  make("sub", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {3, 4})}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); });
  make("mul", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {3, 4})}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); });
  make("add_bias", {{"a", random_tensor(rng, {3, 4})}, {"b", random_tensor(rng, {4})}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return add_bias(v[0], v[1]); });
  make("scale", {{"a", random_tensor(rng, {3, 4})}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return scale(v[0], -1.7); });
  make("tanh", {{"a", random_tensor(rng, {3, 4}, -2, 2)}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return tanh(v[0]); });
  make("sigmoid", {{"a", random_tensor(rng, {3, 4}, -3, 3)}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return sigmoid(v[0]); });
  make("exp", {{"a", random_tensor(rng, {3, 4})}}, {3, 4}, [](Tape&, std::vector<Var>& v) { return exp(v[0]); });
  make("log", {{"a", random_tensor(rng, {3, 4}, 0.5, 2.0)}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return log(v[0]); });
  make("gelu", {{"a", random_tensor(rng, {3, 4}, -3, 3)}}, {3, 4},
       [](Tape&, std::vector<Var>& v) { return gelu(v[0]); });
  make("softmax", {{"a", random_tensor(rng, {3, 5}, -2, 2)}}, {3, 5},
       [](Tape&, std::vector<Var>& v) { return softmax(v[0]); });
  make("log_softmax", {{"a", random_tensor(rng, {3, 5}, -2, 2)}}, {3, 5},
       [](Tape&, std::vector<Var>& v) { return log_softmax(v[0]); });
  make("layer_norm",
       {{"a", random_tensor(rng, {3, 6}, -2, 2)}, {"g", random_tensor(rng, {6})}, {"b", random_tensor(rng, {6})}},
       {3, 6}, [](Tape&, std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); });
  make("embedding", {{"table", random_tensor(rng, {5, 3})}}, {4, 3}, [](Tape&, std::vector<Var>& v) {
    static const std::vector<std::uint32_t> idx{4, 0, 4, 2};
    return embedding(v[0], idx);
  });
  make("concat", {{"a", random_tensor(rng, {2, 3})}, {"b", random_tensor(rng, {2, 2})}}, {2, 5},
       [](Tape&, std::vector<Var>& v) { return concat({v[0], v[1]}, 1); });
  make("slice", {{"a", random_tensor(rng, {3, 6})}}, {3, 2},
       [](Tape&, std::vector<Var>& v) { return slice(v[0], 1, 3, 2); });
  make("reshape", {{"a", random_tensor(rng, {3, 4})}}, {2, 6},
       [](Tape&, std::vector<Var>& v) { return reshape(v[0], {2, 6}); });
  make("permute", {{"a", random_tensor(rng, {2, 3, 4})}}, {4, 2, 3},
       [](Tape&, std::vector<Var>& v) { return permute(v[0], {2, 0, 1}); });
  make("masked_fill", {{"a", random_tensor(rng, {2, 3, 3})}}, {2, 3, 3}, [](Tape&, std::vector<Var>& v) {
    // Causal pattern followed by a softmax, as in attention.
    auto mask = std::make_shared<const std::vector<std::uint8_t>>(std::vector<std::uint8_t>{0, 1, 1, 0, 0, 1, 0, 0, 0});
    return softmax(masked_fill(v[0], mask, -std::numeric_limits<double>::infinity()));
  });
  make("gather_log_prob", {{"a", random_tensor(rng, {4, 3})}}, {4}, [](Tape&, std::vector<Var>& v) {
    static const std::vector<std::uint32_t> idx{2, 0, 1, 2};
    return gather_log_prob(log_softmax(v[0]), idx);
  });
  make("weighted_sum", {{"a", random_tensor(rng, {3, 4})}}, {}, [](Tape&, std::vector<Var>& v) {
    static const auto w = std::make_shared<const Tensor>(Shape{3, 4}, std::vector<double>{
        0.5, 0.0, -1.0, 2.0, 0.25, -0.75, 0.0, 1.5, -2.0, 1.0, 0.125, 0.0});
    return weighted_sum(v[0], w);
  });
  make("sum", {{"a", random_tensor(rng, {3, 4})}}, {}, [](Tape&, std::vector<Var>& v) { return sum(mul(v[0], v[0])); });
  make("mean", {{"a", random_tensor(rng, {3, 4})}}, {},
       [](Tape&, std::vector<Var>& v) { return mean(mul(v[0], v[0])); });

  std::vector<GradCheckReport> out;
  for (auto& c : cases) out.push_back(check_gradients(c->name, c->store, c->f, options));
  return out;
}

}  // namespace cmet::diff
