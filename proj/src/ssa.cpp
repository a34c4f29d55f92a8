#include "cmet/ssa.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "cmet/error.hpp"
#include "cmet/parallel.hpp"
#include "cmet/random.hpp"

namespace cmet {

const char* to_string(EnsembleMethod m) {
  switch (m) {
    case EnsembleMethod::SSA: return "SSA";
    case EnsembleMethod::MET: return "MET";
    case EnsembleMethod::RNN: return "RNN";
  }
  return "?";
}

TrajectoryEnsemble simulate(const ReactionNetwork& net, const RateMap& rates, const State& x0,
                            const std::vector<double>& grid, std::size_t n_traj, std::uint64_t seed) {
  if (!net.in_bounds(x0)) throw Error(ErrorKind::InvalidArgument, "initial state outside the bounds");
  if (n_traj == 0) throw Error(ErrorKind::InvalidArgument, "need at least one trajectory");
  if (grid.empty()) throw Error(ErrorKind::InvalidArgument, "empty time grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || (i > 0 && !(grid[i] > grid[i - 1]))) {
      throw Error(ErrorKind::InvalidArgument, "time grid must be non-negative and strictly increasing");
    }
  }
  const std::size_t N = net.num_species(), M = net.num_reactions();
  const std::vector<double> k = net.reaction_rates(rates);

  TrajectoryEnsemble ens;
  ens.grid = grid;
  ens.num_species = N;
  ens.n_traj = n_traj;
  ens.seed = seed;
  ens.method = EnsembleMethod::SSA;
  ens.states.assign(n_traj * grid.size() * N, 0);

  parallel_for_range(n_traj, 16, [&](std::size_t begin, std::size_t end) {
    std::vector<double> a(M);
    State x;
    for (std::size_t traj = begin; traj < end; ++traj) {
      Rng rng(stream_seed(seed, traj));
      x = x0;
      double t = 0.0;
      std::size_t next = 0;
      while (next < grid.size()) {
        double total = 0.0;
        for (std::size_t j = 0; j < M; ++j) {
          a[j] = jump_in_bounds(net, x, j) ? propensity(net.reactions[j], k[j], x) : 0.0;
          total += a[j];
        }
        const double t_next = total > 0.0 ? t + rng.exponential(total) : INFINITY;
        while (next < grid.size() && grid[next] < t_next) {
          std::copy(x.begin(), x.end(), ens.at(traj, next).begin());
          ++next;
        }
        if (next == grid.size()) break;
        const std::size_t j = rng.categorical(a, total);
        for (std::size_t i = 0; i < N; ++i) x[i] += net.reactions[j].jump[i];
        t = t_next;
      }
    }
  });
  return ens;
}

namespace {

void check_index(const TrajectoryEnsemble& ens, std::size_t time_index) {
  if (time_index >= ens.grid.size()) {
    throw Error(ErrorKind::TimeIndexOutOfRange, "time index " + std::to_string(time_index) + " outside grid of " +
                                                    std::to_string(ens.grid.size()));
  }
}

}  // namespace

std::vector<double> marginals_at(const TrajectoryEnsemble& ens, std::size_t time_index, std::size_t species,
                                 int max_value) {
  check_index(ens, time_index);
  if (species >= ens.num_species) throw Error(ErrorKind::InvalidArgument, "species index out of range");
  std::vector<double> p(static_cast<std::size_t>(max_value) + 1, 0.0);
  for (std::size_t traj = 0; traj < ens.n_traj; ++traj) {
    const int v = ens.at(traj, time_index)[species];
    if (v < 0 || v > max_value) {
      throw Error(ErrorKind::SupportMismatch, "count " + std::to_string(v) + " outside {0.." +
                                                  std::to_string(max_value) + "}");
    }
    p[static_cast<std::size_t>(v)] += 1.0;
  }
  for (double& v : p) v /= static_cast<double>(ens.n_traj);
  return p;
}

std::vector<double> ensemble_mean(const TrajectoryEnsemble& ens, std::size_t time_index) {
  check_index(ens, time_index);
  std::vector<double> m(ens.num_species, 0.0);
  for (std::size_t traj = 0; traj < ens.n_traj; ++traj) {
    const auto x = ens.at(traj, time_index);
    for (std::size_t i = 0; i < ens.num_species; ++i) m[i] += x[i];
  }
  for (double& v : m) v /= static_cast<double>(ens.n_traj);
  return m;
}

std::vector<double> ensemble_std(const TrajectoryEnsemble& ens, std::size_t time_index) {
  const std::vector<double> m = ensemble_mean(ens, time_index);
  std::vector<double> s(ens.num_species, 0.0);
  for (std::size_t traj = 0; traj < ens.n_traj; ++traj) {
    const auto x = ens.at(traj, time_index);
    for (std::size_t i = 0; i < ens.num_species; ++i) s[i] += (x[i] - m[i]) * (x[i] - m[i]);
  }
  for (double& v : s) v = std::sqrt(v / static_cast<double>(ens.n_traj));
  return s;
}

static_assert(std::endian::native == std::endian::little, "ensemble I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'E', 'T', 'E', 'N', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorKind::BadFormat, path + ": truncated ensemble");
  return v;
}

}  // namespace

void write_ensemble(const std::string& path, const TrajectoryEnsemble& ens) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.num_species));
  put<std::uint64_t>(out, ens.grid.size());
  put<std::uint64_t>(out, ens.n_traj);
  put<std::uint64_t>(out, ens.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ens.method));
  out.write(reinterpret_cast<const char*>(ens.grid.data()), static_cast<std::streamsize>(ens.grid.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(ens.states.data()),
            static_cast<std::streamsize>(ens.states.size() * sizeof(std::int32_t)));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path);
}

TrajectoryEnsemble read_ensemble(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorKind::BadFormat, path + ": not an ensemble file");
  }
  if (get<std::uint32_t>(in, path) != kVersion) throw Error(ErrorKind::BadFormat, path + ": unsupported version");
  TrajectoryEnsemble ens;
  ens.num_species = get<std::uint32_t>(in, path);
  const auto n_grid = get<std::uint64_t>(in, path);
  ens.n_traj = get<std::uint64_t>(in, path);
  ens.seed = get<std::uint64_t>(in, path);
  const auto method = get<std::uint32_t>(in, path);
  if (method > 2) throw Error(ErrorKind::BadFormat, path + ": unknown method tag");
  ens.method = static_cast<EnsembleMethod>(method);
  ens.grid.resize(n_grid);
  ens.states.resize(n_grid * ens.n_traj * ens.num_species);
  if (!in.read(reinterpret_cast<char*>(ens.grid.data()), static_cast<std::streamsize>(n_grid * sizeof(double))) ||
      !in.read(reinterpret_cast<char*>(ens.states.data()),
               static_cast<std::streamsize>(ens.states.size() * sizeof(std::int32_t)))) {
    throw Error(ErrorKind::BadFormat, path + ": truncated ensemble");
  }
  return ens;
}

void write_ensemble_csv(const std::string& path, const TrajectoryEnsemble& ens,
                        const std::vector<std::string>& species_names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out.precision(17);
  out << "trajectory,time";
  for (const std::string& s : species_names) out << ',' << s;
  out << '\n';
  for (std::size_t traj = 0; traj < ens.n_traj; ++traj) {
    for (std::size_t ti = 0; ti < ens.grid.size(); ++ti) {
      out << traj << ',' << ens.grid[ti];
      for (std::int32_t v : ens.at(traj, ti)) out << ',' << v;
      out << '\n';
    }
  }
}

}  // namespace cmet
