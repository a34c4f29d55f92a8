#include "cmet/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cmet/error.hpp"

namespace cmet {

RateMap::RateMap(std::initializer_list<std::pair<const std::string, double>> init) {
  for (const auto& [k, v] : init) set(k, v);
}

void RateMap::set(const std::string& symbol, double value) {
  if (!std::isfinite(value) || value < 0.0) {
    throw Error(ErrorKind::NonPositiveRate,
                "rate '" + symbol + "' must be finite and non-negative");
  }
  values_[symbol] = value;
}

double RateMap::at(const std::string& symbol) const {
  const auto it = values_.find(symbol);
  if (it == values_.end()) throw Error(ErrorKind::MissingRate, "no rate for '" + symbol + "'");
  return it->second;
}

bool RateMap::all_positive() const {
  return std::all_of(values_.begin(), values_.end(), [](const auto& kv) { return kv.second > 0.0; });
}

std::optional<std::size_t> ReactionNetwork::species_index(std::string_view name) const {
  for (const auto& s : species) {
    if (s.name == name) return s.index;
  }
  return std::nullopt;
}

std::vector<std::string> ReactionNetwork::species_names() const {
  std::vector<std::string> out;
  out.reserve(species.size());
  for (const auto& s : species) out.push_back(s.name);
  return out;
}

std::vector<double> ReactionNetwork::reaction_rates(const RateMap& rates) const {
  std::vector<double> k;
  k.reserve(reactions.size());
  for (const auto& r : reactions) k.push_back(rates.at(r.rate_symbol));
  return k;
}

std::vector<std::string> ReactionNetwork::rate_symbols() const {
  std::vector<std::string> out;
  for (const auto& r : reactions) {
    if (std::find(out.begin(), out.end(), r.rate_symbol) == out.end()) out.push_back(r.rate_symbol);
  }
  return out;
}

int ReactionNetwork::max_bound() const {
  return bounds.empty() ? 0 : *std::max_element(bounds.begin(), bounds.end());
}

bool ReactionNetwork::in_bounds(std::span<const int> x) const {
  if (x.size() != bounds.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0 || x[i] > bounds[i]) return false;
  }
  return true;
}

void ReactionNetwork::validate() const {
  const std::size_t n = species.size();
  std::set<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    if (species[i].index != i) {
      throw Error(ErrorKind::InvalidArgument, "species indices must be contiguous");
    }
    if (!names.insert(species[i].name).second) {
      throw Error(ErrorKind::DuplicateSpecies, "duplicate species '" + species[i].name + "'");
    }
  }
  if (bounds.size() != n || default_init.size() != n) {
    throw Error(ErrorKind::InvalidArgument, "bounds and init must have one entry per species");
  }
  for (const auto& r : reactions) {
    if (r.jump.size() != n) throw Error(ErrorKind::InvalidArgument, "jump length mismatch");
    if (r.reactants.empty() && r.products.empty()) {
      throw Error(ErrorKind::MalformedLine, "reaction '" + r.rate_symbol + "' has two empty sides");
    }
    std::vector<int> jump(n, 0);
    for (const auto& [s, c] : r.reactants) jump.at(s) -= c;
    for (const auto& [s, c] : r.products) jump.at(s) += c;
    if (jump != r.jump) throw Error(ErrorKind::InvalidArgument, "jump != products - reactants");
    if (!default_rates.contains(r.rate_symbol)) {
      throw Error(ErrorKind::MissingRate, "no rate for '" + r.rate_symbol + "'");
    }
  }
  if (!in_bounds(default_init)) throw Error(ErrorKind::InvalidArgument, "init outside bounds");
}

namespace {

std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  });
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

struct SourceLine {
  int number;
  std::vector<std::string_view> tokens;
};

using Side = std::vector<std::pair<std::size_t, int>>;

Side parse_side(const std::vector<std::string_view>& toks, std::size_t begin, std::size_t end,
                const ReactionNetwork& net, int line) {
  Side side;
  if (end - begin == 1 && toks[begin] == "0") return side;
  if (begin == end) throw ParseError(ErrorKind::MalformedLine, line, "empty reaction side");
  std::map<std::size_t, int> counts;
  std::size_t i = begin;
  while (i < end) {
    int coef = 1;
    if (auto c = parse_number<int>(toks[i])) {
      if (*c <= 0) throw ParseError(ErrorKind::MalformedLine, line, "coefficient must be positive");
      coef = *c;
      ++i;
      if (i == end) throw ParseError(ErrorKind::MalformedLine, line, "coefficient without species");
    }
    const auto idx = net.species_index(toks[i]);
    if (!idx) {
      throw ParseError(ErrorKind::UnknownSpecies, line,
                       "unknown species '" + std::string(toks[i]) + "'");
    }
    counts[*idx] += coef;
    ++i;
    if (i < end) {
      if (toks[i] != "+") throw ParseError(ErrorKind::MalformedLine, line, "expected '+'");
      ++i;
      if (i == end) throw ParseError(ErrorKind::MalformedLine, line, "dangling '+'");
    }
  }
  side.assign(counts.begin(), counts.end());
  return side;
}

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

ReactionNetwork parse_model(std::string_view text) {
  std::vector<SourceLine> lines;
  {
    int number = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
      ++number;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      auto toks = tokenize(line);
      if (!toks.empty()) lines.push_back({number, std::move(toks)});
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
  }

  ReactionNetwork net;

  // Species first so reactions may precede their declarations.
  for (const auto& [line, toks] : lines) {
    if (toks[0] != "species") continue;
    if (toks.size() < 2) throw ParseError(ErrorKind::MalformedLine, line, "species needs a name");
    for (std::size_t i = 1; i < toks.size(); ++i) {
      if (!is_identifier(toks[i]) || toks[i] == "0") {
        throw ParseError(ErrorKind::MalformedLine, line,
                         "bad species name '" + std::string(toks[i]) + "'");
      }
      if (net.species_index(toks[i])) {
        throw ParseError(ErrorKind::DuplicateSpecies, line,
                         "duplicate species '" + std::string(toks[i]) + "'");
      }
      net.species.push_back({std::string(toks[i]), net.species.size()});
    }
  }
  const std::size_t n = net.species.size();
  if (n == 0) throw ParseError(ErrorKind::MalformedLine, lines.empty() ? 1 : lines.back().number, "no species declared");

  std::optional<int> global_bound;
  std::vector<std::optional<int>> species_bound(n);
  net.default_init.assign(n, 0);
  std::map<std::string, int> reaction_line;
  std::map<std::string, int> rate_line;

  for (const auto& [line, toks] : lines) {
    const std::string_view key = toks[0];
    if (key == "species") continue;
    if (key == "bound") {
      if (toks.size() == 2) {
        auto v = parse_number<int>(toks[1]);
        if (!v || *v < 0) throw ParseError(ErrorKind::MalformedLine, line, "bound must be a non-negative integer");
        global_bound = *v;
      } else if (toks.size() == 3) {
        const auto idx = net.species_index(toks[1]);
        if (!idx) throw ParseError(ErrorKind::UnknownSpecies, line, "unknown species '" + std::string(toks[1]) + "'");
        auto v = parse_number<int>(toks[2]);
        if (!v || *v < 0) throw ParseError(ErrorKind::MalformedLine, line, "bound must be a non-negative integer");
        species_bound[*idx] = *v;
      } else {
        throw ParseError(ErrorKind::MalformedLine, line, "expected 'bound <int>' or 'bound <name> <int>'");
      }
    } else if (key == "reaction") {
      if (toks.size() < 5 || toks[2] != ":" || !is_identifier(toks[1])) {
        throw ParseError(ErrorKind::MalformedLine, line, "expected 'reaction <symbol> : <side> -> <side>'");
      }
      const auto arrow = std::find(toks.begin() + 3, toks.end(), "->");
      if (arrow == toks.end()) throw ParseError(ErrorKind::MalformedLine, line, "missing '->'");
      const std::size_t a = static_cast<std::size_t>(arrow - toks.begin());
      Reaction r;
      r.rate_symbol = std::string(toks[1]);
      r.reactants = parse_side(toks, 3, a, net, line);
      r.products = parse_side(toks, a + 1, toks.size(), net, line);
      if (r.reactants.empty() && r.products.empty()) {
        throw ParseError(ErrorKind::MalformedLine, line, "reaction with two empty sides");
      }
      r.jump.assign(n, 0);
      for (const auto& [s, c] : r.reactants) r.jump[s] -= c;
      for (const auto& [s, c] : r.products) r.jump[s] += c;
      reaction_line.emplace(r.rate_symbol, line);
      net.reactions.push_back(std::move(r));
    } else if (key == "rate") {
      if (toks.size() != 3 || !is_identifier(toks[1])) {
        throw ParseError(ErrorKind::MalformedLine, line, "expected 'rate <symbol> <value>'");
      }
      const auto v = parse_number<double>(toks[2]);
      if (!v || !std::isfinite(*v)) throw ParseError(ErrorKind::MalformedLine, line, "bad rate value");
      if (*v <= 0.0) {
        throw ParseError(ErrorKind::NonPositiveRate, line,
                         "rate '" + std::string(toks[1]) + "' must be positive");
      }
      net.default_rates.set(std::string(toks[1]), *v);
      rate_line[std::string(toks[1])] = line;
    } else if (key == "init") {
      if (toks.size() != 3) throw ParseError(ErrorKind::MalformedLine, line, "expected 'init <name> <int>'");
      const auto idx = net.species_index(toks[1]);
      if (!idx) throw ParseError(ErrorKind::UnknownSpecies, line, "unknown species '" + std::string(toks[1]) + "'");
      const auto v = parse_number<int>(toks[2]);
      if (!v || *v < 0) throw ParseError(ErrorKind::MalformedLine, line, "init must be a non-negative integer");
      net.default_init[*idx] = *v;
    } else if (key == "time") {
      if (toks.size() != 3) throw ParseError(ErrorKind::MalformedLine, line, "expected 'time <t0> <tT>'");
      const auto a = parse_number<double>(toks[1]);
      const auto b = parse_number<double>(toks[2]);
      if (!a || !b || !(*b >= *a)) throw ParseError(ErrorKind::MalformedLine, line, "bad time range");
      net.t0 = *a;
      net.t_final = *b;
    } else {
      throw ParseError(ErrorKind::MalformedLine, line, "unknown keyword '" + std::string(key) + "'");
    }
  }

  const int last_line = lines.back().number;
  net.bounds.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (species_bound[i]) {
      net.bounds[i] = *species_bound[i];
    } else if (global_bound) {
      net.bounds[i] = *global_bound;
    } else {
      throw ParseError(ErrorKind::MalformedLine, last_line,
                       "no bound for species '" + net.species[i].name + "'");
    }
    if (net.default_init[i] > net.bounds[i]) {
      throw ParseError(ErrorKind::MalformedLine, last_line,
                       "init of '" + net.species[i].name + "' exceeds its bound");
    }
  }
  for (const auto& r : net.reactions) {
    if (!net.default_rates.contains(r.rate_symbol)) {
      throw ParseError(ErrorKind::MissingRate, reaction_line.at(r.rate_symbol),
                       "no rate for '" + r.rate_symbol + "'");
    }
  }
  return net;
}

ReactionNetwork load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

std::string serialize_model(const ReactionNetwork& net) {
  std::ostringstream out;
  out << "species";
  for (const auto& s : net.species) out << ' ' << s.name;
  out << '\n';
  const int global = net.max_bound();
  out << "bound " << global << '\n';
  for (std::size_t i = 0; i < net.species.size(); ++i) {
    if (net.bounds[i] != global) out << "bound " << net.species[i].name << ' ' << net.bounds[i] << '\n';
  }
  auto side = [&](const std::vector<std::pair<std::size_t, int>>& terms) {
    if (terms.empty()) return std::string("0");
    std::string s;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (t) s += " + ";
      if (terms[t].second != 1) s += std::to_string(terms[t].second) + ' ';
      s += net.species[terms[t].first].name;
    }
    return s;
  };
  for (const auto& r : net.reactions) {
    out << "reaction " << r.rate_symbol << " : " << side(r.reactants) << " -> " << side(r.products) << '\n';
  }
  for (const auto& [k, v] : net.default_rates.values()) out << "rate " << k << ' ' << format_double(v) << '\n';
  for (std::size_t i = 0; i < net.species.size(); ++i) {
    out << "init " << net.species[i].name << ' ' << net.default_init[i] << '\n';
  }
  out << "time " << format_double(net.t0) << ' ' << format_double(net.t_final) << '\n';
  return out.str();
}

double propensity(const Reaction& reaction, double rate, std::span<const int> x) {
  double a = rate;
  for (const auto& [s, c] : reaction.reactants) {
    const int xi = x[s];
    if (xi < c) return 0.0;
    for (int q = 0; q < c; ++q) a *= static_cast<double>(xi - q);
  }
  return a;
}

double propensity(const ReactionNetwork& net, const RateMap& rates, std::span<const int> x,
                  std::size_t j) {
  const Reaction& r = net.reactions.at(j);
  return propensity(r, rates.at(r.rate_symbol), x);
}

bool jump_in_bounds(const ReactionNetwork& net, std::span<const int> x, std::size_t j, int sign) {
  const auto& jump = net.reactions[j].jump;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const int y = x[i] + sign * jump[i];
    if (y < 0 || y > net.bounds[i]) return false;
  }
  return true;
}

std::optional<State> apply_jump(const ReactionNetwork& net, std::span<const int> x, std::size_t j) {
  if (!jump_in_bounds(net, x, j, 1)) return std::nullopt;
  State y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += net.reactions[j].jump[i];
  return y;
}

}  // namespace cmet
