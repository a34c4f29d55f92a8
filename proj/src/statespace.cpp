#include "cmet/statespace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "cmet/error.hpp"
#include "cmet/random.hpp"

namespace cmet {

TruncatedStateSpace::TruncatedStateSpace(std::vector<int> bounds) : bounds_(std::move(bounds)) {
  strides_.resize(bounds_.size());
  for (std::size_t i = 0; i < bounds_.size(); ++i) {
    if (bounds_[i] < 0) throw Error(ErrorKind::InvalidArgument, "negative bound");
    strides_[i] = size_;
    const auto radix = static_cast<std::size_t>(bounds_[i]) + 1;
    if (size_ > std::numeric_limits<std::size_t>::max() / radix) {
      throw Error(ErrorKind::SpaceTooLarge, "state space size overflows");
    }
    size_ *= radix;
  }
}

std::size_t TruncatedStateSpace::encode(std::span<const int> x) const {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < bounds_.size(); ++i) idx += strides_[i] * static_cast<std::size_t>(x[i]);
  return idx;
}

void TruncatedStateSpace::decode_into(std::size_t index, std::span<int> out) const {
  for (std::size_t i = 0; i < bounds_.size(); ++i) {
    const auto radix = static_cast<std::size_t>(bounds_[i]) + 1;
    out[i] = static_cast<int>(index % radix);
    index /= radix;
  }
}

State TruncatedStateSpace::decode(std::size_t index) const {
  State x(bounds_.size());
  decode_into(index, x);
  return x;
}

bool TruncatedStateSpace::contains(std::span<const int> x) const {
  if (x.size() != bounds_.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0 || x[i] > bounds_[i]) return false;
  }
  return true;
}

double GeneratorMatrix::max_exit_rate() const {
  double q = 0.0;
  for (double d : diagonal_) q = std::max(q, -d);
  return q;
}

void GeneratorMatrix::multiply(std::span<const double> in, std::span<double> out) const {
  const std::size_t n = dimension();
  for (std::size_t i = 0; i < n; ++i) out[i] = diagonal_[i] * in[i];
  for (std::size_t c = 0; c < n; ++c) {
    const double pc = in[c];
    if (pc == 0.0) continue;
    for (std::size_t e = col_start_[c]; e < col_start_[c + 1]; ++e) out[rows_[e]] += values_[e] * pc;
  }
}

double GeneratorMatrix::entry(std::size_t row, std::size_t col) const {
  double v = row == col ? diagonal_[col] : 0.0;
  for (std::size_t e = col_start_[col]; e < col_start_[col + 1]; ++e) {
    if (rows_[e] == row) v += values_[e];
  }
  return v;
}

double GeneratorMatrix::column_sum(std::size_t col) const {
  double s = diagonal_[col];
  for (std::size_t e = col_start_[col]; e < col_start_[col + 1]; ++e) s += values_[e];
  return s;
}

std::vector<double> GeneratorMatrix::to_dense() const {
  const std::size_t n = dimension();
  std::vector<double> dense(n * n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    dense[c * n + c] += diagonal_[c];
    for (std::size_t e = col_start_[c]; e < col_start_[c + 1]; ++e) dense[rows_[e] * n + c] += values_[e];
  }
  return dense;
}

GeneratorMatrix build_generator(const ReactionNetwork& net, const RateMap& rates,
                                const TruncatedStateSpace& space, std::size_t cap) {
  if (space.size() > cap) {
    throw Error(ErrorKind::SpaceTooLarge, "state space has " + std::to_string(space.size()) +
                                              " states, above the cap of " + std::to_string(cap));
  }
  if (space.bounds() != net.bounds) throw Error(ErrorKind::InvalidArgument, "space bounds differ from network bounds");
  const auto k = net.reaction_rates(rates);
  const std::size_t n = space.size();
  GeneratorMatrix gen;
  gen.col_start_.assign(n + 1, 0);
  gen.diagonal_.assign(n, 0.0);
  gen.rows_.reserve(n * net.num_reactions());
  gen.values_.reserve(n * net.num_reactions());
  State x(space.dimension());
  State y(space.dimension());
  for (std::size_t c = 0; c < n; ++c) {
    gen.col_start_[c] = gen.rows_.size();
    space.decode_into(c, x);
    // Merge reactions that land on the same target so rows stay unique.
    const std::size_t first = gen.rows_.size();
    double off = 0.0;
    for (std::size_t j = 0; j < net.num_reactions(); ++j) {
      if (!jump_in_bounds(net, x, j)) continue;
      const double a = propensity(net.reactions[j], k[j], x);
      if (a <= 0.0) continue;
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + net.reactions[j].jump[i];
      const auto target = static_cast<std::uint32_t>(space.encode(y));
      if (target == c) continue;  // zero jump: no net flow
      bool merged = false;
      for (std::size_t e = first; e < gen.rows_.size(); ++e) {
        if (gen.rows_[e] == target) {
          gen.values_[e] += a;
          merged = true;
          break;
        }
      }
      if (!merged) {
        gen.rows_.push_back(target);
        gen.values_.push_back(a);
      }
    }
    for (std::size_t e = first; e < gen.rows_.size(); ++e) off += gen.values_[e];
    gen.diagonal_[c] = -off;
  }
  gen.col_start_[n] = gen.rows_.size();
  return gen;
}

double ProbabilityVector::total() const { return std::accumulate(p.begin(), p.end(), 0.0); }

ProbabilityVector delta_distribution(const TruncatedStateSpace& space, std::span<const int> x,
                                     double time) {
  if (!space.contains(x)) throw Error(ErrorKind::InvalidArgument, "delta state outside the box");
  ProbabilityVector pv{std::vector<double>(space.size(), 0.0), time};
  pv.p[space.encode(x)] = 1.0;
  return pv;
}

ProbabilityVector evolve_exact(const GeneratorMatrix& gen, const ProbabilityVector& p0, double t) {
  if (t < 0.0) throw Error(ErrorKind::InvalidArgument, "evolve_exact needs t >= 0");
  if (p0.p.size() != gen.dimension()) throw Error(ErrorKind::ShapeMismatch, "vector/generator size mismatch");
  ProbabilityVector out{p0.p, p0.time + t};
  const double q = gen.max_exit_rate();
  if (t == 0.0 || q == 0.0) return out;

  constexpr double max_segment = 32.0;
  const auto segments = static_cast<std::size_t>(std::ceil(q * t / max_segment));
  const double tau = t / static_cast<double>(segments);
  const double lambda = q * tau;
  const std::size_t n = gen.dimension();
  std::vector<double> v(n), tv(n), acc(n);
  for (std::size_t s = 0; s < segments; ++s) {
    v = out.p;
    double w = std::exp(-lambda);
    for (std::size_t i = 0; i < n; ++i) acc[i] = w * v[i];
    for (std::size_t k = 1;; ++k) {
      gen.multiply(v, tv);
      for (std::size_t i = 0; i < n; ++i) v[i] += tv[i] / q;
      w *= lambda / static_cast<double>(k);
      for (std::size_t i = 0; i < n; ++i) acc[i] += w * v[i];
      // Poisson tail beyond k is below w * r / (1 - r) with r = lambda/(k+1).
      const double r = lambda / static_cast<double>(k + 1);
      if (r < 1.0 && w * r / (1.0 - r) < 1e-15) break;
    }
    out.p = acc;
  }
  for (double& x : out.p) x = std::max(x, 0.0);
  return out;
}

std::vector<double> marginal(const TruncatedStateSpace& space, std::span<const double> p,
                             std::size_t species) {
  std::vector<double> m(static_cast<std::size_t>(space.bounds().at(species)) + 1, 0.0);
  State x(space.dimension());
  for (std::size_t i = 0; i < space.size(); ++i) {
    space.decode_into(i, x);
    m[static_cast<std::size_t>(x[species])] += p[i];
  }
  return m;
}

std::vector<double> joint_marginal(const TruncatedStateSpace& space, std::span<const double> p,
                                   std::size_t a, std::size_t b) {
  const auto na = static_cast<std::size_t>(space.bounds().at(a)) + 1;
  const auto nb = static_cast<std::size_t>(space.bounds().at(b)) + 1;
  std::vector<double> m(na * nb, 0.0);
  State x(space.dimension());
  for (std::size_t i = 0; i < space.size(); ++i) {
    space.decode_into(i, x);
    m[static_cast<std::size_t>(x[a]) * nb + static_cast<std::size_t>(x[b])] += p[i];
  }
  return m;
}

void write_probability_csv(const std::string& path, const TruncatedStateSpace& space,
                           const std::vector<std::string>& species_names,
                           const ProbabilityVector& pv) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << "index";
  for (const auto& s : species_names) out << ',' << s;
  out << ",probability\n";
  out.precision(17);
  State x(space.dimension());
  for (std::size_t i = 0; i < space.size(); ++i) {
    space.decode_into(i, x);
    out << i;
    for (int v : x) out << ',' << v;
    out << ',' << pv.p[i] << '\n';
  }
}

ProbabilityVector read_probability_csv(const std::string& path, const TruncatedStateSpace& space,
                                       double time) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  ProbabilityVector pv{std::vector<double>(space.size(), 0.0), time};
  State x(space.dimension());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    const std::size_t idx = std::stoull(cell);
    for (std::size_t i = 0; i < x.size(); ++i) {
      std::getline(ss, cell, ',');
      x[i] = std::stoi(cell);
    }
    std::getline(ss, cell, ',');
    if (idx >= space.size() || space.encode(x) != idx) {
      throw Error(ErrorKind::BadFormat, path + ": index does not match state tuple");
    }
    pv.p[idx] = std::stod(cell);
  }
  return pv;
}

std::size_t StateHash::operator()(const State& s) const noexcept {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (int v : s) h = mix64(h ^ static_cast<std::uint32_t>(v));
  return static_cast<std::size_t>(h);
}

namespace {

double exit_rate(const ReactionNetwork& net, std::span<const double> k, std::span<const int> x) {
  double a0 = 0.0;
  for (std::size_t j = 0; j < net.num_reactions(); ++j) {
    const auto& jump = net.reactions[j].jump;
    if (std::all_of(jump.begin(), jump.end(), [](int v) { return v == 0; })) continue;
    if (jump_in_bounds(net, x, j)) a0 += propensity(net.reactions[j], k[j], x);
  }
  return a0;
}

void check_stable(double dt, double rate) {
  if (dt * rate >= 1.0) {
    throw Error(ErrorKind::UnstableStep,
                "kernel step dt=" + std::to_string(dt) + " is unstable for exit rate " +
                    std::to_string(rate));
  }
}

}  // namespace

double apply_kernel_at_state(const ReactionNetwork& net, const RateMap& rates, double dt,
                             const LogProbFn& logp, std::span<const int> x) {
  const double px = std::exp(logp(x));
  if (dt == 0.0) return px;
  const auto k = net.reaction_rates(rates);
  const double out_rate = exit_rate(net, k, x);
  check_stable(dt, out_rate);
  double value = px * (1.0 - dt * out_rate);
  State pred(x.begin(), x.end());
  for (std::size_t j = 0; j < net.num_reactions(); ++j) {
    if (!jump_in_bounds(net, x, j, -1)) continue;
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = x[i] - net.reactions[j].jump[i];
    const double a = propensity(net.reactions[j], k[j], pred);
    if (a <= 0.0 || std::equal(pred.begin(), pred.end(), x.begin())) continue;
    check_stable(dt, exit_rate(net, k, pred));
    value += dt * a * std::exp(logp(pred));
  }
  return value;
}

std::vector<double> kernel_log_targets(const ReactionNetwork& net, const RateMap& rates,
                                       double dt, const BatchLogProbFn& logp,
                                       const std::vector<State>& states) {
  const auto k = net.reaction_rates(rates);
  const std::size_t m = net.num_reactions();

  std::unordered_map<State, std::size_t, StateHash> index;
  std::vector<State> needed;
  auto intern = [&](const State& s) {
    const auto [it, inserted] = index.emplace(s, needed.size());
    if (inserted) needed.push_back(s);
    return it->second;
  };

  struct Term {
    std::size_t source;
    double rate;
  };
  std::vector<std::size_t> self(states.size());
  std::vector<double> self_weight(states.size());
  std::vector<std::vector<Term>> inflow(states.size());
  State pred;
  for (std::size_t s = 0; s < states.size(); ++s) {
    const State& x = states[s];
    self[s] = intern(x);
    if (dt == 0.0) {
      self_weight[s] = 1.0;
      continue;
    }
    const double out_rate = exit_rate(net, k, x);
    check_stable(dt, out_rate);
    self_weight[s] = 1.0 - dt * out_rate;
    for (std::size_t j = 0; j < m; ++j) {
      if (!jump_in_bounds(net, x, j, -1)) continue;
      pred = x;
      for (std::size_t i = 0; i < pred.size(); ++i) pred[i] -= net.reactions[j].jump[i];
      if (pred == x) continue;
      const double a = propensity(net.reactions[j], k[j], pred);
      if (a <= 0.0) continue;
      check_stable(dt, exit_rate(net, k, pred));
      inflow[s].push_back({intern(pred), dt * a});
    }
  }

  const std::vector<double> lp = logp(needed);
  std::vector<double> out(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    double v = self_weight[s] * std::exp(lp[self[s]]);
    for (const auto& term : inflow[s]) v += term.rate * std::exp(lp[term.source]);
    out[s] = std::log(std::max(v, kKernelFloor));
  }
  return out;
}

std::vector<double> exact_kernel_log_table(const ReactionNetwork& net, const RateMap& rates,
                                           double dt, const BatchLogProbFn& logp,
                                           std::size_t cap) {
  const TruncatedStateSpace space(net.bounds);
  const GeneratorMatrix gen = build_generator(net, rates, space, cap);
  std::vector<State> all(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) all[i] = space.decode(i);
  const std::vector<double> lp = logp(all);
  ProbabilityVector p0{std::vector<double>(space.size()), 0.0};
  for (std::size_t i = 0; i < space.size(); ++i) p0.p[i] = std::exp(lp[i]);
  const ProbabilityVector p1 = evolve_exact(gen, p0, dt);
  std::vector<double> out(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) out[i] = std::log(std::max(p1.p[i], kKernelFloor));
  return out;
}

}  // namespace cmet
