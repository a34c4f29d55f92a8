#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cmet/error.hpp"
#include "cmet/hash.hpp"
#include "cmet/parallel.hpp"
#include "cmet/reward.hpp"

namespace cmet {

namespace fs = std::filesystem;

std::string rates_key(const ReactionNetwork& net, const RateMap& rates) {
  std::string key;
  for (double k : net.reaction_rates(rates)) {
    if (!key.empty()) key += ',';
    key += k > 0.0 ? std::to_string(std::llround(std::log(k) * 1e9)) : "-inf";
  }
  return key;
}

namespace {

std::string init_key(const State& x) {
  std::string key;
  for (int v : x) {
    if (!key.empty()) key += ',';
    key += std::to_string(v);
  }
  return key;
}

nlohmann::json to_json(const RewardSetEntry& e) {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [sym, v] : e.rates.values()) rates[sym] = v;
  return {{"rates", rates}, {"init", e.init}, {"t", e.t}, {"delta_t", e.dt}, {"path", e.path}, {"hash", e.hash}};
}

RewardSetEntry from_json(const nlohmann::json& j) {
  RewardSetEntry e;
  for (const auto& [sym, v] : j.at("rates").items()) e.rates.set(sym, v.get<double>());
  e.init = j.at("init").get<State>();
  e.t = j.at("t").get<double>();
  e.dt = j.at("delta_t").get<double>();
  e.path = j.at("path").get<std::string>();
  e.hash = j.at("hash").get<std::string>();
  return e;
}

}  // namespace

RewardModelSet::RewardModelSet(std::string dir) : dir_(std::move(dir)) {}

RewardModelSet RewardModelSet::open(const std::string& dir) {
  const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::Io, "reward-set manifest not found: " + manifest);
  RewardModelSet set(dir);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      set.entries_.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::BadFormat, manifest + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

void RewardModelSet::append(const RewardSetEntry& entry) {
  fs::create_directories(dir_);
  const std::string manifest = (fs::path(dir_) / "manifest.jsonl").string();
  std::ofstream out(manifest, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot append to " + manifest);
  out << to_json(entry).dump() << '\n';
  entries_.push_back(entry);
}

RewardModel RewardModelSet::load(const RewardSetEntry& entry) const {
  const std::string path = (fs::path(dir_) / entry.path).string();
  if (hex64(fnv1a_file(path)) != entry.hash) {
    throw Error(ErrorKind::BadFormat, path + ": checkpoint hash does not match the manifest");
  }
  return RewardModel::load(path);
}

std::optional<std::size_t> RewardModelSet::find(const ReactionNetwork& net, const RateMap& rates,
                                                const State& init, double t) const {
  const std::string key = rates_key(net, rates);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const RewardSetEntry& e = entries_[i];
    if (e.init == init && std::abs(e.t - t) < 1e-9 && rates_key(net, e.rates) == key) return i;
  }
  return std::nullopt;
}

void RewardModelSet::validate(const ReactionNetwork& net) const {
  std::map<std::string, double> last;
  for (const RewardSetEntry& e : entries_) {
    const std::string key = rates_key(net, e.rates) + "|" + init_key(e.init);
    if (auto it = last.find(key); it != last.end() && !(e.t > it->second)) {
      throw Error(ErrorKind::BadFormat, "reward-set times not increasing for " + key);
    }
    last[key] = e.t;
    if (!fs::exists(fs::path(dir_) / e.path)) {
      throw Error(ErrorKind::BadFormat, "reward-set checkpoint missing: " + e.path);
    }
    if (!net.in_bounds(e.init)) throw Error(ErrorKind::BadFormat, "reward-set init outside bounds: " + e.path);
  }
}

namespace {

// Trains one chain, writing checkpoints without touching the manifest.
std::vector<RewardStepStats> run_chain(const ReactionNetwork& net, const RateMap& rates, const State& x0,
                                       const std::vector<double>& save_times, const RewardHyper& hyper,
                                       const std::string& dir, const std::string& stem,
                                       std::vector<RewardSetEntry>& entries) {
  fs::create_directories(dir);
  return train_reward_chain(net, rates, x0, save_times, hyper, [&](double t, const RewardModel& m) {
    std::ostringstream name;
    name << stem << "_t" << std::llround(t / hyper.dt) << ".ckpt";
    const std::string path = (fs::path(dir) / name.str()).string();
    nlohmann::json meta;
    meta["t"] = t;
    meta["delta_t"] = hyper.dt;
    meta["init"] = x0;
    meta["seed"] = hyper.seed;
    for (const auto& [sym, v] : rates.values()) meta["rates"][sym] = v;
    m.save(path, meta);
    entries.push_back({rates, x0, t, hyper.dt, name.str(), hex64(fnv1a_file(path))});
  });
}

std::string chain_stem(const ReactionNetwork& net, const RateMap& rates, const State& x0) {
  return "rm_" + hex64(fnv1a(rates_key(net, rates) + "|" + init_key(x0)));
}

}  // namespace

std::vector<RewardStepStats> train_reward_set(const ReactionNetwork& net, const RateMap& rates,
                                              const State& x0, const std::vector<double>& save_times,
                                              const RewardHyper& hyper, RewardModelSet& set) {
  std::vector<RewardSetEntry> entries;
  auto stats = run_chain(net, rates, x0, save_times, hyper, set.dir(), chain_stem(net, rates, x0), entries);
  for (const RewardSetEntry& e : entries) set.append(e);
  return stats;
}

std::vector<std::vector<RewardStepStats>> train_reward_grid(const ReactionNetwork& net,
                                                            const std::vector<RewardChainSpec>& chains,
                                                            const std::vector<double>& save_times,
                                                            const RewardHyper& hyper, RewardModelSet& set) {
  std::vector<std::vector<RewardStepStats>> stats(chains.size());
  std::vector<std::vector<RewardSetEntry>> entries(chains.size());
  parallel_for(chains.size(), [&](std::size_t c) {
    RewardHyper h = hyper;
    h.seed = stream_seed(hyper.seed, c);
    stats[c] = run_chain(net, chains[c].rates, chains[c].init, save_times, h, set.dir(),
                         chain_stem(net, chains[c].rates, chains[c].init), entries[c]);
  });
  for (const auto& list : entries) {
    for (const RewardSetEntry& e : list) set.append(e);
  }
  return stats;
}

}  // namespace cmet
