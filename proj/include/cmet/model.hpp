#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cmet {

/// Molecular counts, one entry per species in declaration order.
using State = std::vector<int>;

struct Species {
  std::string name;
  std::size_t index = 0;

  bool operator==(const Species&) const = default;
};

/// A mass-action reaction. Stoichiometries are stored sparsely as
/// (species index, coefficient) pairs sorted by species index.
struct Reaction {
  std::string rate_symbol;
  std::vector<std::pair<std::size_t, int>> reactants;
  std::vector<std::pair<std::size_t, int>> products;
  std::vector<int> jump;  // products - reactants, length N

  bool operator==(const Reaction&) const = default;
};

/// Rate constants keyed by symbol. Values must be finite and non-negative; a
/// zero rate disables a reaction. Model files and prompts additionally demand
/// strictly positive values.
class RateMap {
 public:
  RateMap() = default;
  RateMap(std::initializer_list<std::pair<const std::string, double>> init);

  void set(const std::string& symbol, double value);
  double at(const std::string& symbol) const;
  bool contains(const std::string& symbol) const { return values_.count(symbol) != 0; }
  const std::map<std::string, double>& values() const { return values_; }
  bool all_positive() const;

  bool operator==(const RateMap&) const = default;

 private:
  std::map<std::string, double> values_;
};

class ReactionNetwork {
 public:
  std::vector<Species> species;
  std::vector<Reaction> reactions;
  std::vector<int> bounds;  // inclusive per-species maximum count
  RateMap default_rates;
  State default_init;
  double t0 = 0.0;
  double t_final = 1.0;

  std::size_t num_species() const { return species.size(); }
  std::size_t num_reactions() const { return reactions.size(); }
  std::optional<std::size_t> species_index(std::string_view name) const;
  std::vector<std::string> species_names() const;

  /// Rate constant for every reaction, in reaction order.
  std::vector<double> reaction_rates(const RateMap& rates) const;

  /// Distinct rate symbols in order of first use.
  std::vector<std::string> rate_symbols() const;

  int max_bound() const;
  bool in_bounds(std::span<const int> x) const;

  /// Throws Error when an invariant is broken (see parse_model for kinds).
  void validate() const;

  bool operator==(const ReactionNetwork&) const = default;
};

/// Parses the line-oriented `.cme` model language:
///
///   species <name>+
///   bound <int> | bound <name> <int>
///   reaction <rate_symbol> : <side> -> <side>
///   rate <symbol> <positive float>
///   init <name> <int>
///   time <t0> <tT>
///
/// where <side> is "0" or terms "[coef] name" joined by "+". '#' starts a
/// comment. Throws ParseError with the offending line number.
ReactionNetwork parse_model(std::string_view text);
ReactionNetwork load_model(const std::string& path);

/// Inverse of parse_model: parse_model(serialize_model(n)) == n.
std::string serialize_model(const ReactionNetwork& net);

/// Stochastic mass-action propensity k_j * prod_i (x_i)_(r_ij), with the
/// falling factorial over reactant counts.
double propensity(const ReactionNetwork& net, const RateMap& rates, std::span<const int> x,
                  std::size_t j);
double propensity(const Reaction& reaction, double rate, std::span<const int> x);

/// x + jump_j, or nullopt when the result leaves [0, bound] in any species.
std::optional<State> apply_jump(const ReactionNetwork& net, std::span<const int> x,
                                std::size_t j);

/// True if x + sign*jump_j stays inside the box; no allocation.
bool jump_in_bounds(const ReactionNetwork& net, std::span<const int> x, std::size_t j,
                    int sign = 1);

}  // namespace cmet
