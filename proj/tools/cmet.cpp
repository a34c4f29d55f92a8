// cmet: command-line front end. Every command resolves a JSON run config
// (file values overridden by flags), writes its artifacts under the output
// directory and finishes with manifest.json.

#include <CLI11.hpp>
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cmet/analysis.hpp"
#include "cmet/diff/gradcheck.hpp"
#include "cmet/error.hpp"
#include "cmet/hash.hpp"
#include "cmet/met_train.hpp"
#include "cmet/random.hpp"
#include "cmet/reward.hpp"
#include "cmet/ssa.hpp"
#include "cmet/statespace.hpp"
#include "cmet/tasks.hpp"

#ifndef CMET_GIT_DESCRIBE
#define CMET_GIT_DESCRIBE "unknown"
#endif
#ifndef CMET_MODELS_DIR
#define CMET_MODELS_DIR "models"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmet;

namespace {

constexpr int kSchemaVersion = 1;

// Validation failures that are not library errors (bad config, missing files).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- flag registry -----------------------------------------------------------

enum class Kind { Str, Int, Num, Bool, NumList, StrList, KeyVals };

struct Flag {
  std::string name;     // "--n"
  std::string pointer;  // "/simulate/n"
  Kind kind;
  std::string help;
};

const std::vector<Flag> kCommon = {
    {"--model", "/model", Kind::Str, "reaction network file (.cme)"},
    {"--seed", "/seed", Kind::Int, "master seed (required)"},
    {"--out", "/out", Kind::Str, "output directory"},
    {"--t", "/times", Kind::NumList, "time points (repeatable or comma separated)"},
    {"--rate", "/rates", Kind::KeyVals, "rate override symbol=value (repeatable)"},
    {"--init", "/init", Kind::KeyVals, "initial count species=value (repeatable)"},
};

const std::map<std::string, std::vector<Flag>> kCommandFlags = {
    {"solve-exact", {}},
    {"simulate", {{"--n", "/simulate/n", Kind::Int, "number of trajectories"}}},
    {"train-reward",
     {{"--hidden", "/reward/hidden", Kind::Int, "GRU width"},
      {"--batch", "/reward/batch", Kind::Int, "samples per epoch"},
      {"--epochs", "/reward/epochs", Kind::Int, "epochs per time step"},
      {"--dt", "/reward/dt", Kind::Num, "kernel time step"},
      {"--lr", "/reward/lr", Kind::Num, "learning rate"},
      {"--exact-kernel", "/reward/exact_kernel", Kind::Bool, "first-order exact-exponential kernel"}}},
    {"train-met",
     {{"--reward-set", "/train/reward_set", Kind::Str, "reward-model set directory"},
      {"--epochs", "/train/epochs", Kind::Int, "parameter updates"},
      {"--s-batch", "/train/s_batch", Kind::Int, "samples per reward element"},
      {"--m-acc", "/train/m_acc", Kind::Int, "reward elements per update"},
      {"--lr", "/train/lr", Kind::Num, "base learning rate"},
      {"--warmup", "/train/warmup", Kind::Int, "warmup steps"},
      {"--ppo", "/train/ppo", Kind::Bool, "clipped-ratio surrogate"},
      {"--d-emb", "/met/d_emb", Kind::Int, "embedding width"},
      {"--d-ff", "/met/d_ff", Kind::Int, "prompt perceptron width"},
      {"--d-l", "/met/d_l", Kind::Int, "decoder blocks"},
      {"--heads", "/met/h", Kind::Int, "attention heads"},
      {"--d-p", "/met/d_p", Kind::Int, "prompt embedding vectors"}}},
    {"sample",
     {{"--checkpoint", "/met/checkpoint", Kind::Str, "trained MET checkpoint"},
      {"--n", "/sample/n", Kind::Int, "samples per time point"}}},
    {"trajectories",
     {{"--checkpoint", "/met/checkpoint", Kind::Str, "trained MET checkpoint"},
      {"--n", "/trajectories/n", Kind::Int, "number of trajectories"},
      {"--dt", "/trajectories/dt", Kind::Num, "step between samples"},
      {"--steps", "/trajectories/steps", Kind::Int, "number of steps"}}},
    {"analyze",
     {{"--ensemble", "/analyze/ensemble", Kind::Str, "ensemble file (binary)"},
      {"--pair", "/analyze/pair", Kind::StrList, "two species for mode counting"},
      {"--window", "/analyze/window", Kind::Int, "mode-count smoothing half-width"}}},
    {"sweep",
     {{"--a", "/sweep/a/symbol", Kind::Str, "first swept rate symbol"},
      {"--a-values", "/sweep/a/values", Kind::NumList, "values of the first rate"},
      {"--b", "/sweep/b/symbol", Kind::Str, "second swept rate symbol"},
      {"--b-values", "/sweep/b/values", Kind::NumList, "values of the second rate"},
      {"--species", "/sweep/species", Kind::Str, "species whose counts are scored"},
      {"--n", "/sweep/n", Kind::Int, "samples per grid point"},
      {"--sampler", "/sweep/sampler", Kind::Str, "met or ssa"},
      {"--checkpoint", "/met/checkpoint", Kind::Str, "trained MET checkpoint"}}},
    {"infer",
     {{"--checkpoint", "/met/checkpoint", Kind::Str, "trained MET checkpoint"},
      {"--data", "/infer/data", Kind::Str, "observed ensemble (binary)"},
      {"--free", "/infer/free", Kind::StrList, "rate symbols to infer"},
      {"--steps", "/infer/steps", Kind::Int, "chain length"},
      {"--proposal-std", "/infer/proposal_std", Kind::Num, "log-rate random-walk width"},
      {"--batch", "/infer/batch", Kind::Int, "data pairs per step"},
      {"--criterion", "/infer/criterion", Kind::Str, "mean_log_prob (default) or mean_prob"},
      {"--metropolis", "/infer/metropolis", Kind::Bool, "Metropolis acceptance"}}},
    {"gradcheck",
     {{"--checkpoint", "/met/checkpoint", Kind::Str, "also check this MET"},
      {"--tol", "/gradcheck/tol", Kind::Num, "relative error tolerance"}}},
};

const std::map<std::string, std::string> kDescriptions = {
    {"solve-exact", "exact distribution on the truncated state space"},
    {"simulate", "SSA trajectory ensemble"},
    {"train-reward", "train a reward-model set"},
    {"train-met", "train a MET against a reward-model set"},
    {"sample", "sample states from a trained MET"},
    {"trajectories", "iterative MET trajectory ensemble"},
    {"analyze", "metrics of an ensemble against the exact solution"},
    {"sweep", "bimodality over a two-rate grid"},
    {"infer", "random-walk rate inference from trajectory data"},
    {"gradcheck", "finite-difference check of every op"},
};

std::vector<std::string> split_commas(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::size_t start = 0;
    while (start <= r.size()) {
      const std::size_t comma = std::min(r.find(',', start), r.size());
      if (comma > start) out.push_back(r.substr(start, comma - start));
      start = comma + 1;
    }
  }
  return out;
}

double to_number(const std::string& s, const std::string& flag) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(flag + ": not a number: " + s);
}

// Writes one flag's values into the config at its JSON pointer.
void apply_flag(json& cfg, const Flag& f, const std::vector<std::string>& raw) {
  const json::json_pointer ptr(f.pointer);
  switch (f.kind) {
    case Kind::Str:
      cfg[ptr] = raw.back();
      break;
    case Kind::Int: {
      const std::string& s = raw.back();
      if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(f.name + ": expected a non-negative integer, got " + s);
      }
      try {
        cfg[ptr] = std::stoull(s);
      } catch (const std::out_of_range&) {
        throw ConfigError(f.name + ": integer out of range: " + s);
      }
      break;
    }
    case Kind::Num:
      cfg[ptr] = to_number(raw.back(), f.name);
      break;
    case Kind::Bool:
      cfg[ptr] = true;
      break;
    case Kind::NumList: {
      json list = json::array();
      for (const auto& s : split_commas(raw)) list.push_back(to_number(s, f.name));
      cfg[ptr] = list;
      break;
    }
    case Kind::StrList:
      cfg[ptr] = split_commas(raw);
      break;
    case Kind::KeyVals:
      for (const auto& kv : raw) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError(f.name + ": expected name=value, got " + kv);
        const double v = to_number(kv.substr(eq + 1), f.name);
        // integral values stay integers so they can serve as counts
        if (v == std::floor(v) && std::abs(v) < 1e15) {
          cfg[ptr / kv.substr(0, eq)] = static_cast<std::int64_t>(v);
        } else {
          cfg[ptr / kv.substr(0, eq)] = v;
        }
      }
      break;
  }
}

// ---- run context -------------------------------------------------------------

template <class T>
T get_or(const json& cfg, const std::string& pointer, T fallback) {
  const json::json_pointer ptr(pointer);
  if (!cfg.contains(ptr)) return fallback;
  try {
    return cfg.at(ptr).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config " + pointer + ": wrong type");
  }
}

std::string require_path(const json& cfg, const std::string& pointer, const std::string& what) {
  const std::string p = get_or<std::string>(cfg, pointer, "");
  if (p.empty()) throw ConfigError("missing " + what + " (" + pointer + ")");
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p);
  return p;
}

std::string resolve_model_path(const std::string& p) {
  if (fs::exists(p)) return p;
  const fs::path shipped = fs::path(CMET_MODELS_DIR) / p;
  if (fs::exists(shipped)) return shipped.string();
  throw ConfigError("model file not found: " + p);
}

struct Run {
  std::string command;
  json cfg;
  fs::path out;
  ReactionNetwork net;
  RateMap rates;
  State init;
  std::vector<double> times;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  int status = 0;  // non-zero when a check ran but did not pass

  std::string path(const std::string& name) {
    artifacts.push_back(name);
    return (out / name).string();
  }
};

// Resolves model, rates, init, times and seed; throws ConfigError.
void resolve_common(Run& run) {
  json& cfg = run.cfg;
  if (get_or<int>(cfg, "/schema_version", kSchemaVersion) != kSchemaVersion) {
    throw ConfigError("unsupported config schema_version");
  }
  cfg["schema_version"] = kSchemaVersion;
  if (!cfg.contains("seed")) throw ConfigError("a seed is required (--seed or \"seed\" in the config)");
  run.seed = get_or<std::uint64_t>(cfg, "/seed", 0);
  const std::string out = get_or<std::string>(cfg, "/out", "");
  if (out.empty()) throw ConfigError("missing output directory (--out)");
  run.out = out;

  const std::string model = get_or<std::string>(cfg, "/model", "");
  if (model.empty()) throw ConfigError("missing model file (--model)");
  run.net = load_model(resolve_model_path(model));

  run.rates = run.net.default_rates;
  if (cfg.contains("rates")) {
    for (const auto& [sym, v] : cfg["rates"].items()) {
      if (!v.is_number()) throw ConfigError("rate " + sym + " is not a number");
      const auto symbols = run.net.rate_symbols();
      if (std::find(symbols.begin(), symbols.end(), sym) == symbols.end()) {
        throw ConfigError("unknown rate symbol: " + sym);
      }
      if (v.get<double>() < 0) throw ConfigError("rate " + sym + " is negative");
      run.rates.set(sym, v.get<double>());
    }
  }
  run.init = run.net.default_init;
  if (cfg.contains("init")) {
    for (const auto& [name, v] : cfg["init"].items()) {
      const auto idx = run.net.species_index(name);
      if (!idx) throw ConfigError("unknown species in init: " + name);
      if (!v.is_number_integer()) throw ConfigError("init " + name + " is not an integer");
      run.init[*idx] = v.get<int>();
    }
  }
  if (!run.net.in_bounds(run.init)) throw ConfigError("initial state outside the model bounds");
  run.times = get_or<std::vector<double>>(cfg, "/times", {run.net.t_final});
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    if (!(run.times[i] >= 0.0) || (i > 0 && !(run.times[i] > run.times[i - 1]))) {
      throw ConfigError("times must be non-negative and strictly increasing");
    }
  }
  if (run.times.empty()) throw ConfigError("empty time grid");
}

// Exclusive ownership of the output directory for the lifetime of a command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw ConfigError("output directory is in use (lock file exists): " + path_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::unique_ptr<METModel> load_met(const Run& run) {
  return std::make_unique<METModel>(
      METModel::load(require_path(run.cfg, "/met/checkpoint", "MET checkpoint"), run.net));
}

// ---- commands ----------------------------------------------------------------

std::string time_label(double t) {
  std::ostringstream s;
  s << "t=" << t;
  return s.str();
}

void cmd_solve_exact(Run& run) {
  const TruncatedStateSpace space(run.net.bounds);
  const GeneratorMatrix gen = build_generator(run.net, run.rates, space);
  ProbabilityVector p = delta_distribution(space, run.init);
  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    p = evolve_exact(gen, p, run.times[i] - p.time);
    p.time = run.times[i];
    write_probability_csv(run.path("p_t" + std::to_string(i) + ".csv"), space, run.net.species_names(), p);
    rows.push_back({"total_mass", time_label(run.times[i]), p.total()});
  }
  write_metrics_csv(run.path("summary.csv"), rows);
}

void cmd_simulate(Run& run) {
  const auto n = get_or<std::size_t>(run.cfg, "/simulate/n", 1000);
  const TrajectoryEnsemble ens = simulate(run.net, run.rates, run.init, run.times, n, run.seed);
  write_ensemble(run.path("ensemble.bin"), ens);
  write_ensemble_csv(run.path("ensemble.csv"), ens, run.net.species_names());
}

RewardHyper reward_hyper(const Run& run) {
  RewardHyper h;
  h.hidden = get_or(run.cfg, "/reward/hidden", h.hidden);
  h.batch = get_or(run.cfg, "/reward/batch", h.batch);
  h.epochs = get_or(run.cfg, "/reward/epochs", h.epochs);
  h.dt = get_or(run.cfg, "/reward/dt", h.dt);
  h.lr = get_or(run.cfg, "/reward/lr", h.lr);
  h.exact_kernel = get_or(run.cfg, "/reward/exact_kernel", h.exact_kernel);
  h.seed = run.seed;
  return h;
}

void cmd_train_reward(Run& run) {
  // Extra chains may be listed as {"rates": {...}, "init": {...}} objects
  // overriding the resolved base rates and initial state.
  std::vector<RewardChainSpec> chains;
  const json extra = get_or<json>(run.cfg, "/reward/chains", json::array());
  if (extra.empty()) chains.push_back({run.rates, run.init});
  for (const auto& c : extra) {
    RewardChainSpec spec{run.rates, run.init};
    for (const auto& [sym, v] : c.value("rates", json::object()).items()) spec.rates.set(sym, v.get<double>());
    for (const auto& [name, v] : c.value("init", json::object()).items()) {
      const auto idx = run.net.species_index(name);
      if (!idx) throw ConfigError("unknown species in chain init: " + name);
      spec.init[*idx] = v.get<int>();
    }
    if (!run.net.in_bounds(spec.init)) throw ConfigError("chain init outside the model bounds");
    chains.push_back(std::move(spec));
  }
  const fs::path set_dir = run.out / "reward_set";
  if (fs::exists(set_dir / "manifest.jsonl")) throw ConfigError("reward set already exists: " + set_dir.string());
  RewardModelSet set(set_dir.string());
  const auto stats = train_reward_grid(run.net, chains, run.times, reward_hyper(run), set);
  std::ofstream csv(run.path("reward_trace.csv"));
  csv << "chain,step,t,kl\n";
  csv.precision(17);
  for (std::size_t c = 0; c < stats.size(); ++c) {
    for (const auto& s : stats[c]) csv << c << ',' << s.step << ',' << s.t << ',' << s.kl << '\n';
  }
  run.artifacts.push_back("reward_set/manifest.jsonl");
}

METConfig met_config(const Run& run) {
  METConfig c;
  if (run.cfg.contains("met")) {
    json j = run.cfg["met"];
    j.erase("checkpoint");
    json merged = c.to_json();
    merged.update(j);
    c = METConfig::from_json(merged);
  }
  c.validate();
  return c;
}

void cmd_train_met(Run& run) {
  const std::string set_dir = get_or<std::string>(run.cfg, "/train/reward_set", "");
  if (set_dir.empty()) throw ConfigError("missing reward set (--reward-set)");
  const fs::path manifest = fs::path(set_dir) / "manifest.jsonl";
  if (!fs::exists(manifest)) throw ConfigError("reward-set manifest not found: " + manifest.string());
  const RewardModelSet set = RewardModelSet::open(set_dir);
  set.validate(run.net);

  TrainHyper h;
  h.s_batch = get_or(run.cfg, "/train/s_batch", h.s_batch);
  h.m_acc = get_or(run.cfg, "/train/m_acc", h.m_acc);
  h.epochs = get_or(run.cfg, "/train/epochs", h.epochs);
  h.schedule.base_lr = get_or(run.cfg, "/train/lr", h.schedule.base_lr);
  h.schedule.warmup_steps = get_or(run.cfg, "/train/warmup", h.schedule.warmup_steps);
  h.schedule.law = diff::parse_decay_law(get_or<std::string>(run.cfg, "/train/decay", "inverse_sqrt"));
  h.clip_norm = get_or(run.cfg, "/train/clip_norm", h.clip_norm);
  h.ppo = get_or(run.cfg, "/train/ppo", h.ppo);
  h.exact_kernel = get_or(run.cfg, "/train/exact_kernel", h.exact_kernel);
  h.seed = run.seed;

  METModel model(run.net, met_config(run), stream_seed(run.seed, 0x4d4554));
  const TrainResult result = train_met(model, set, run.net, h, [](std::size_t epoch, double kl, double lr) {
    if (epoch % 100 == 0) std::cerr << "epoch " << epoch << " kl " << kl << " lr " << lr << '\n';
  });
  write_trace_csv(run.path("trace.csv"), result);
  model.save(run.path("met.ckpt"), {{"reward_set", set_dir}, {"epochs", h.epochs}, {"seed", run.seed}});
}

void write_states_csv(const std::string& path, const ReactionNetwork& net, const std::vector<State>& states) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  const auto names = net.species_names();
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  for (const State& s : states) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
    out << '\n';
  }
}

void cmd_sample(Run& run) {
  const auto model = load_met(run);
  const auto n = get_or<std::size_t>(run.cfg, "/sample/n", 1000);
  std::vector<Prompt> prompts;
  for (double t : run.times) prompts.push_back(build_prompt(run.net, run.rates, run.init, t));
  const auto samples = model->sample_batch(prompts, n, run.seed);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    write_states_csv(run.path("samples_t" + std::to_string(i) + ".csv"), run.net, samples[i]);
  }
}

void cmd_trajectories(Run& run) {
  const auto model = load_met(run);
  const auto n = get_or<std::size_t>(run.cfg, "/trajectories/n", 1000);
  const double dt = get_or(run.cfg, "/trajectories/dt", 1.0);
  const auto steps = get_or<std::size_t>(run.cfg, "/trajectories/steps", 10);
  if (!(dt > 0)) throw ConfigError("trajectories dt must be positive");
  const TrajectoryEnsemble ens =
      sample_trajectories_iterative(*model, run.net, run.rates, run.init, dt, steps, n, run.seed);
  write_ensemble(run.path("ensemble.bin"), ens);
  write_ensemble_csv(run.path("ensemble.csv"), ens, run.net.species_names());
}

void cmd_analyze(Run& run) {
  const TrajectoryEnsemble ens = read_ensemble(require_path(run.cfg, "/analyze/ensemble", "ensemble"));
  if (ens.num_species != run.net.num_species()) throw ConfigError("ensemble does not match the model");
  std::vector<MetricRow> rows;
  std::optional<TruncatedStateSpace> space;
  std::optional<GeneratorMatrix> gen;
  try {
    space.emplace(run.net.bounds);
    gen.emplace(build_generator(run.net, run.rates, *space));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::SpaceTooLarge) throw;
    std::cerr << "exact comparison skipped: " << e.what() << '\n';
  }
  // The exact reference starts from the configured initial state at time 0.
  std::optional<ProbabilityVector> p;
  if (gen) p = delta_distribution(*space, run.init);
  const auto names = run.net.species_names();
  for (std::size_t ti = 0; ti < ens.grid.size(); ++ti) {
    const std::string ctx = time_label(ens.grid[ti]);
    if (p) {
      *p = evolve_exact(*gen, *p, ens.grid[ti] - p->time);
      p->time = ens.grid[ti];
    }
    const auto mean = ensemble_mean(ens, ti), sd = ensemble_std(ens, ti);
    for (std::size_t s = 0; s < names.size(); ++s) {
      rows.push_back({"mean", ctx + " " + names[s], mean[s]});
      rows.push_back({"std", ctx + " " + names[s], sd[s]});
      if (p) {
        const auto exact = marginal(*space, p->p, s);
        rows.push_back({"hellinger", ctx + " " + names[s],
                        hellinger(marginals_at(ens, ti, s, run.net.bounds[s]), exact)});
      }
    }
  }
  const auto pair = get_or<std::vector<std::string>>(run.cfg, "/analyze/pair", {});
  if (!pair.empty()) {
    if (pair.size() != 2) throw ConfigError("--pair needs exactly two species");
    const auto a = run.net.species_index(pair[0]), b = run.net.species_index(pair[1]);
    if (!a || !b) throw ConfigError("unknown species in --pair");
    const auto window = get_or<std::size_t>(run.cfg, "/analyze/window", 1);
    const std::size_t last = ens.grid.size() - 1;
    const Histogram2D h = histogram2d(ens, last, *a, *b, run.net.bounds[*a], run.net.bounds[*b]);
    rows.push_back({"mode_count", time_label(ens.grid[last]) + " " + pair[0] + "," + pair[1],
                    static_cast<double>(mode_count(h, window, 0.01))});
  }
  write_metrics_csv(run.path("metrics.csv"), rows);
}

SweepAxis sweep_axis(const Run& run, const std::string& key) {
  SweepAxis axis{get_or<std::string>(run.cfg, "/sweep/" + key + "/symbol", ""),
                 get_or<std::vector<double>>(run.cfg, "/sweep/" + key + "/values", {})};
  const auto symbols = run.net.rate_symbols();
  if (std::find(symbols.begin(), symbols.end(), axis.symbol) == symbols.end()) {
    throw ConfigError("sweep axis " + key + ": unknown rate symbol '" + axis.symbol + "'");
  }
  if (axis.values.empty()) throw ConfigError("sweep axis " + key + ": no values");
  return axis;
}

void cmd_sweep(Run& run) {
  const SweepAxis a = sweep_axis(run, "a"), b = sweep_axis(run, "b");
  const std::string species = get_or<std::string>(run.cfg, "/sweep/species", run.net.species.front().name);
  const auto idx = run.net.species_index(species);
  if (!idx) throw ConfigError("unknown sweep species: " + species);
  const auto n = get_or<std::size_t>(run.cfg, "/sweep/n", 1000);
  const std::string kind = get_or<std::string>(run.cfg, "/sweep/sampler", "met");
  const double t = run.times.back();
  std::unique_ptr<METModel> model;
  StateSampler sampler;
  if (kind == "met") {
    model = load_met(run);
    sampler = met_sampler(*model, run.net, run.init, t);
  } else if (kind == "ssa") {
    sampler = ssa_sampler(run.net, run.init, t);
  } else {
    throw ConfigError("sweep sampler must be 'met' or 'ssa'");
  }
  const auto cells = sweep_bimodality(sampler, run.rates, a, b, *idx, n, run.seed);
  write_sweep_csv(run.path("sweep.csv"), a, b, cells);
}

void cmd_infer(Run& run) {
  const auto model = load_met(run);
  const TrajectoryEnsemble data = read_ensemble(require_path(run.cfg, "/infer/data", "trajectory data"));
  InferenceOptions opt;
  opt.steps = get_or(run.cfg, "/infer/steps", opt.steps);
  opt.proposal_std = get_or(run.cfg, "/infer/proposal_std", opt.proposal_std);
  opt.batch = get_or(run.cfg, "/infer/batch", opt.batch);
  opt.metropolis = get_or(run.cfg, "/infer/metropolis", opt.metropolis);
  const std::string crit = get_or<std::string>(run.cfg, "/infer/criterion", "mean_log_prob");
  if (crit == "mean_prob") {
    opt.criterion = InferenceCriterion::MeanProb;
  } else if (crit == "mean_log_prob") {
    opt.criterion = InferenceCriterion::MeanLogProb;
  } else {
    throw ConfigError("criterion must be mean_prob or mean_log_prob");
  }
  opt.seed = run.seed;
  const auto free = get_or<std::vector<std::string>>(run.cfg, "/infer/free", {});
  if (free.empty()) throw ConfigError("no free rate symbols (--free)");
  const InferenceChain chain = infer_rates(*model, run.net, data, run.rates, free, opt);
  write_chain_csv(run.path("chain.csv"), chain);
  json est;
  const RateMap estimate = chain.estimate();
  for (const auto& [sym, v] : estimate.values()) est[sym] = v;
  std::ofstream(run.path("estimate.json")) << json{{"estimate", est}, {"accepted", chain.acceptance_count()}}.dump(2)
                                           << '\n';
}

void cmd_gradcheck(Run& run) {
  const double tol = get_or(run.cfg, "/gradcheck/tol", 1e-4);
  diff::GradCheckOptions opt;
  opt.seed = run.seed;
  std::vector<diff::GradCheckReport> reports = diff::check_all_ops(run.seed, opt);
  if (run.cfg.contains(json::json_pointer("/met/checkpoint"))) {
    auto model = load_met(run);
    std::vector<Prompt> prompts{build_prompt(run.net, run.rates, run.init, run.times.back())};
    std::vector<METModel::Group> groups{{0, model->sample(prompts[0], 4, run.seed)}};
    std::sort(groups[0].states.begin(), groups[0].states.end());
    groups[0].states.erase(std::unique(groups[0].states.begin(), groups[0].states.end()), groups[0].states.end());
    opt.max_per_param = 4;
    reports.push_back(diff::check_gradients(
        "met", model->params(),
        [&](diff::Tape& tape) {
          std::vector<std::vector<double>> logp;
          return model->weighted_logprob(
              tape, prompts, groups,
              [](const std::vector<std::vector<double>>&, std::vector<std::vector<double>>& c) {
                for (auto& g : c) std::fill(g.begin(), g.end(), 1.0);
              },
              logp);
        },
        opt));
  }
  std::ofstream csv(run.path("gradcheck.csv"));
  csv << "op,checked,max_rel_error,max_abs_error,passed\n";
  csv.precision(6);
  bool ok = true;
  for (const auto& r : reports) {
    csv << r.name << ',' << r.checked << ',' << r.max_rel_error << ',' << r.max_abs_error << ',' << r.passed(tol)
        << '\n';
    ok = ok && r.passed(tol);
  }
  if (!ok) {
    std::cerr << "gradient check failed; see gradcheck.csv\n";
    run.status = 1;
  }
}

const std::map<std::string, void (*)(Run&)> kHandlers = {
    {"solve-exact", cmd_solve_exact}, {"simulate", cmd_simulate}, {"train-reward", cmd_train_reward},
    {"train-met", cmd_train_met},     {"sample", cmd_sample},     {"trajectories", cmd_trajectories},
    {"analyze", cmd_analyze},         {"sweep", cmd_sweep},       {"infer", cmd_infer},
    {"gradcheck", cmd_gradcheck},
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnstableStep:
    case ErrorKind::DivergedLoss:
      return 3;
    case ErrorKind::ShapeMismatch:
    case ErrorKind::DisconnectedGraph:
      return 1;
    default:
      return 2;
  }
}

void write_manifest(const Run& run, const std::vector<std::string>& argv, double wall) {
  json artifacts = json::object();
  for (const auto& a : run.artifacts) artifacts[a] = hex64(fnv1a_file((run.out / a).string()));
  const json m{{"command", run.command},
               {"argv", argv},
               {"config", run.cfg},
               {"config_hash", hex64(fnv1a(run.cfg.dump()))},
               {"git_describe", CMET_GIT_DESCRIBE},
               {"wall_time_s", wall},
               {"artifacts", artifacts}};
  std::ofstream out(run.out / "manifest.json");
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest in " + run.out.string());
  out << m.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chemical master equation solvers: exact, SSA and MET"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CMET_GIT_DESCRIBE));

  struct Bound {
    std::string command;
    const Flag* flag;
    std::vector<std::string> values;
    bool set = false;
  };
  std::deque<Bound> bound;
  std::map<std::string, std::string> config_files;
  std::map<std::string, CLI::App*> subs;

  for (const auto& [name, specific] : kCommandFlags) {
    CLI::App* sub = app.add_subcommand(name, kDescriptions.at(name));
    subs[name] = sub;
    sub->add_option("--config", config_files[name], "JSON run config")->check(CLI::ExistingFile);
    auto attach = [&](const Flag& f) {
      Bound& b = bound.emplace_back(Bound{name, &f, {}, false});
      if (f.kind == Kind::Bool) {
        sub->add_flag(f.name, b.set, f.help);
      } else if (f.kind == Kind::NumList || f.kind == Kind::StrList || f.kind == Kind::KeyVals) {
        sub->add_option(f.name, b.values, f.help)->allow_extra_args(true);
      } else {
        sub->add_option(f.name, b.values, f.help)->expected(1);
      }
    };
    for (const Flag& f : kCommon) attach(f);
    for (const Flag& f : specific) attach(f);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  Run run;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) run.command = name;
  }
  const std::vector<std::string> args(argv, argv + argc);
  const auto start = std::chrono::steady_clock::now();
  try {
    if (const std::string& file = config_files[run.command]; !file.empty()) {
      std::ifstream in(file);
      try {
        run.cfg = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError(file + ": " + e.what());
      }
      if (!run.cfg.is_object()) throw ConfigError(file + ": config must be a JSON object");
    } else {
      run.cfg = json::object();
    }
    for (const Bound& b : bound) {
      if (b.command != run.command) continue;
      if (b.flag->kind == Kind::Bool ? b.set : !b.values.empty()) apply_flag(run.cfg, *b.flag, b.values);
    }
    resolve_common(run);
    fs::create_directories(run.out);
    DirLock lock(run.out);
    kHandlers.at(run.command)(run);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream(run.out / "config.json") << run.cfg.dump(2) << '\n';
    write_manifest(run, args, wall);
    std::cout << run.command << ": wrote " << run.artifacts.size() << " artifact(s) to " << run.out.string() << '\n';
    return run.status;
  } catch (const ConfigError& e) {
    std::cerr << "cmet " << run.command << ": " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "cmet " << run.command << ": " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "cmet " << run.command << ": " << e.what() << '\n';
    return 1;
  }
}
