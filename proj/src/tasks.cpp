#include "cmet/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "cmet/analysis.hpp"
#include "cmet/error.hpp"
#include "cmet/hash.hpp"
#include "cmet/parallel.hpp"

namespace cmet {

StateSampler met_sampler(const METModel& model, const ReactionNetwork& net, State x0, double t) {
  return [&model, &net, x0 = std::move(x0), t](const RateMap& rates, std::size_t n, std::uint64_t seed) {
    return model.sample(build_prompt(net, rates, x0, t), n, seed);
  };
}

StateSampler ssa_sampler(const ReactionNetwork& net, State x0, double t) {
  return [&net, x0 = std::move(x0), t](const RateMap& rates, std::size_t n, std::uint64_t seed) {
    const TrajectoryEnsemble ens = simulate(net, rates, x0, {t}, n, seed);
    std::vector<State> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto s = ens.at(k, 0);
      out[k].assign(s.begin(), s.end());
    }
    return out;
  };
}

namespace {

std::uint64_t cell_seed(std::uint64_t seed, double a, double b) {
  std::uint64_t h = fnv1a(hex64(std::bit_cast<std::uint64_t>(a)));
  h = fnv1a(hex64(std::bit_cast<std::uint64_t>(b)), h);
  return stream_seed(seed, h);
}

}  // namespace

std::vector<SweepCell> sweep_bimodality(const StateSampler& sampler, const RateMap& base, const SweepAxis& a,
                                        const SweepAxis& b, std::size_t species, std::size_t n_samples,
                                        std::uint64_t seed) {
  if (a.symbol == b.symbol) throw Error(ErrorKind::InvalidArgument, "sweep axes must name different rates");
  std::vector<SweepCell> cells(a.values.size() * b.values.size());
  parallel_for(cells.size(), [&](std::size_t c) {
    SweepCell& cell = cells[c];
    cell.a = a.values[c / b.values.size()];
    cell.b = b.values[c % b.values.size()];
    RateMap rates = base;
    rates.set(a.symbol, cell.a);
    rates.set(b.symbol, cell.b);
    const std::vector<State> states = sampler(rates, n_samples, cell_seed(seed, cell.a, cell.b));
    std::vector<double> counts;
    counts.reserve(states.size());
    for (const State& s : states) counts.push_back(s.at(species));
    try {
      cell.coefficient = bimodality_coefficient(counts);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateVariance) throw;
    }
  });
  return cells;
}

void write_sweep_csv(const std::string& path, const SweepAxis& a, const SweepAxis& b,
                     const std::vector<SweepCell>& cells) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(12);
  out << a.symbol << ',' << b.symbol << ",coefficient\n";
  for (const SweepCell& c : cells) {
    out << c.a << ',' << c.b << ',';
    if (c.coefficient) out << *c.coefficient;
    out << '\n';
  }
}

std::size_t InferenceChain::acceptance_count() const {
  return static_cast<std::size_t>(std::count(accepted.begin(), accepted.end(), true));
}

RateMap InferenceChain::estimate() const {
  if (visited.empty()) return {};
  RateMap out = visited.back();
  const std::size_t from = visited.size() / 2;
  for (const std::string& sym : symbols) {
    std::vector<double> v;
    for (std::size_t i = from; i < visited.size(); ++i) v.push_back(visited[i].at(sym));
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    out.set(sym, v[v.size() / 2]);
  }
  return out;
}

namespace {

struct Pair {
  std::size_t traj;
  std::size_t time;
};

// Per-pair log-probabilities of the data transitions under `rates`.
std::vector<double> transition_logprob(const METModel& model, const ReactionNetwork& net,
                                       const TrajectoryEnsemble& data, const RateMap& rates,
                                       const std::vector<Pair>& pairs) {
  std::vector<Prompt> prompts;
  std::vector<METModel::Item> items;
  prompts.reserve(pairs.size());
  items.reserve(pairs.size());
  for (const Pair& p : pairs) {
    const auto prev = data.at(p.traj, p.time - 1);
    const auto cur = data.at(p.traj, p.time);
    const State x0(prev.begin(), prev.end());
    prompts.push_back(build_prompt(net, rates, x0, data.grid[p.time] - data.grid[p.time - 1]));
    items.push_back({static_cast<std::uint32_t>(prompts.size() - 1), State(cur.begin(), cur.end())});
  }
  return model.logprob(prompts, items);
}

double criterion(const std::vector<double>& logp, InferenceCriterion c) {
  double acc = 0.0;
  for (double l : logp) acc += c == InferenceCriterion::MeanProb ? std::exp(l) : l;
  return acc / static_cast<double>(logp.size());
}

}  // namespace

InferenceChain infer_rates(const METModel& model, const ReactionNetwork& net, const TrajectoryEnsemble& data,
                           const RateMap& start, const std::vector<std::string>& free_symbols,
                           const InferenceOptions& options) {
  if (data.grid.size() < 2 || data.n_traj == 0) {
    throw Error(ErrorKind::InvalidArgument, "inference needs at least one trajectory with two time points");
  }
  if (data.num_species != net.num_species()) {
    throw Error(ErrorKind::InvalidArgument, "data species count does not match the model");
  }
  if (options.batch == 0) throw Error(ErrorKind::InvalidArgument, "inference batch must be positive");
  if (!(options.proposal_std >= 0.0)) throw Error(ErrorKind::InvalidArgument, "proposal std must be >= 0");
  for (const std::string& sym : free_symbols) {
    if (!start.contains(sym)) throw Error(ErrorKind::MissingRate, "no starting value for rate '" + sym + "'");
  }
  if (!start.all_positive()) throw Error(ErrorKind::NonPositiveRate, "inference starts from non-positive rates");

  InferenceChain chain;
  chain.symbols = free_symbols;
  chain.proposal_std.assign(free_symbols.size(), options.proposal_std);
  chain.seed = options.seed;
  chain.visited.push_back(start);

  RateMap current = start;
  for (std::size_t step = 0; step < options.steps; ++step) {
    Rng rng(stream_seed(options.seed, step));
    RateMap proposal = current;
    for (const std::string& sym : free_symbols) {
      proposal.set(sym, current.at(sym) * std::exp(options.proposal_std * rng.normal()));
    }
    std::vector<Pair> pairs(options.batch);
    for (Pair& p : pairs) {
      p.traj = rng.below(data.n_traj);
      p.time = 1 + rng.below(data.grid.size() - 1);
    }
    const std::vector<double> old_lp = transition_logprob(model, net, data, current, pairs);
    const std::vector<double> new_lp = transition_logprob(model, net, data, proposal, pairs);
    const double old_score = criterion(old_lp, options.criterion);
    const double new_score = criterion(new_lp, options.criterion);
    bool accept;
    if (options.metropolis) {
      double delta = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) delta += new_lp[i] - old_lp[i];
      accept = std::log(rng.uniform_pos()) < delta;
    } else {
      accept = new_score > old_score;
    }
    if (accept) current = proposal;
    chain.accepted.push_back(accept);
    chain.score.push_back(accept ? new_score : old_score);
    chain.visited.push_back(current);
  }
  return chain;
}

void write_chain_csv(const std::string& path, const InferenceChain& chain) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(12);
  out << "step,accepted,score";
  for (const std::string& s : chain.symbols) out << ',' << s;
  out << '\n';
  for (std::size_t i = 0; i < chain.visited.size(); ++i) {
    out << i << ',';
    if (i > 0) out << (chain.accepted[i - 1] ? 1 : 0) << ',' << chain.score[i - 1];
    else out << ',';
    for (const std::string& s : chain.symbols) out << ',' << chain.visited[i].at(s);
    out << '\n';
  }
}

TrajectoryEnsemble sample_trajectories_iterative(const METModel& model, const ReactionNetwork& net,
                                                 const RateMap& rates, const State& x0, double dt,
                                                 std::size_t n_steps, std::size_t n_traj, std::uint64_t seed) {
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "time step must be positive");
  if (!net.in_bounds(x0)) throw Error(ErrorKind::InvalidArgument, "initial state outside the bounds");
  const std::size_t N = net.num_species();
  TrajectoryEnsemble ens;
  ens.num_species = N;
  ens.n_traj = n_traj;
  ens.seed = seed;
  ens.method = EnsembleMethod::MET;
  for (std::size_t k = 0; k <= n_steps; ++k) ens.grid.push_back(static_cast<double>(k) * dt);
  ens.states.resize(n_traj * ens.grid.size() * N);

  std::vector<State> current(n_traj, x0);
  for (std::size_t j = 0; j < n_traj; ++j) std::copy(x0.begin(), x0.end(), ens.at(j, 0).begin());
  for (std::size_t k = 1; k <= n_steps; ++k) {
    std::vector<Prompt> prompts;
    prompts.reserve(n_traj);
    for (const State& x : current) prompts.push_back(build_prompt(net, rates, x, dt));
    const auto next = model.sample_batch(prompts, 1, stream_seed(seed, k));
    for (std::size_t j = 0; j < n_traj; ++j) {
      current[j] = next[j].front();
      std::copy(current[j].begin(), current[j].end(), ens.at(j, k).begin());
    }
  }
  return ens;
}

}  // namespace cmet
