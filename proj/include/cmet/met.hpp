#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmet/diff/optim.hpp"
#include "cmet/diff/parameters.hpp"
#include "cmet/diff/tape.hpp"
#include "cmet/model.hpp"
#include "cmet/random.hpp"

namespace cmet {

/// Raw conditioning vector [ln k_1 .. ln k_M, x0_1 .. x0_N, t] with one log
/// rate per reaction.
struct Prompt {
  std::vector<double> values;

  bool operator==(const Prompt&) const = default;
};

/// Throws NonPositiveRate for a rate <= 0 and InvalidArgument for t < 0 or a
/// wrong-sized x0.
Prompt build_prompt(const ReactionNetwork& net, const RateMap& rates, std::span<const int> x0, double t);

/// Per-entry affine standardization applied to prompts before the network.
struct PromptNorm {
  std::vector<double> shift;
  std::vector<double> scale;

  static PromptNorm identity(std::size_t length);
  /// Mean and standard deviation of each entry; entries with (near) zero
  /// spread keep scale 1.
  static PromptNorm fit(const std::vector<Prompt>& prompts);
  std::vector<double> apply(const Prompt& p) const;
};

struct METConfig {
  std::size_t d_emb = 64;
  /// Hidden width of the prompt perceptron.
  std::size_t d_ff = 1024;
  /// Width of each block's feed-forward sublayer; 0 means 4 * d_emb.
  std::size_t d_mlp = 0;
  std::size_t d_l = 8;
  std::size_t h = 8;
  std::size_t d_p = 16;

  std::size_t mlp_width() const { return d_mlp == 0 ? 4 * d_emb : d_mlp; }
  std::size_t d_k() const { return d_emb / h; }
  /// Throws InvalidArgument unless d_emb % h == 0 and every size is positive.
  void validate() const;

  nlohmann::json to_json() const;
  static METConfig from_json(const nlohmann::json& j);
};

/// Closed-form trainable count:
///   prompt  = L*d_ff + d_ff + d_ff*d_p + d_p + d_p*(d_p*d_emb) + d_p*d_emb
///   tokens  = V*d_emb
///   block   = 4*d_emb + 3*d_emb^2 + 3*d_emb + d_emb^2 + d_emb + 2*d_emb*d_mlp + d_mlp + d_emb
///   output  = 2*d_emb + d_emb*V + V
///   total   = prompt + tokens + d_l*block + output
/// with L = N + M + 1 and V = max bound + 1.
std::size_t parameter_count(const METConfig& cfg, const ReactionNetwork& net);

/// Decoder-only transformer over [prompt block || x_1 .. x_{N-1}]. The
/// prompt is mapped by a two-layer tanh perceptron to d_p scalars and
/// projected into d_p embedding vectors; sinusoidal positions are added and
/// d_l pre-norm blocks of causal multi-head attention and GELU feed-forward
/// follow. The output at position d_p - 1 + i is the conditional of x_i given
/// x_<i and the prompt.
class METModel {
 public:
  METModel(const ReactionNetwork& net, METConfig cfg, std::uint64_t seed);

  const METConfig& config() const noexcept { return cfg_; }
  std::size_t num_species() const noexcept { return bounds_.size(); }
  std::size_t num_reactions() const noexcept { return num_reactions_; }
  std::size_t prompt_length() const noexcept { return num_reactions_ + bounds_.size() + 1; }
  std::size_t vocab() const noexcept { return vocab_; }
  const std::vector<int>& bounds() const noexcept { return bounds_; }
  const PromptNorm& norm() const noexcept { return norm_; }
  void set_norm(PromptNorm norm);
  diff::ParameterStore& params() noexcept { return params_; }
  const diff::ParameterStore& params() const noexcept { return params_; }

  /// The N conditionals along x for one prompt.
  std::vector<std::vector<double>> conditionals(const Prompt& prompt, std::span<const int> x) const;
  double logprob(const Prompt& prompt, std::span<const int> x) const;

  struct Item {
    std::uint32_t prompt = 0;
    State state;
  };
  /// log p(state | prompt) for many (prompt, state) pairs in one pass.
  std::vector<double> logprob(const std::vector<Prompt>& prompts, const std::vector<Item>& items) const;

  /// Ancestral sampling; prompt p draws from Rng(stream_seed(seed, p)) so the
  /// result for one prompt does not depend on the rest of the batch.
  std::vector<std::vector<State>> sample_batch(const std::vector<Prompt>& prompts, std::size_t n_per_prompt,
                                               std::uint64_t seed) const;
  std::vector<State> sample(const Prompt& prompt, std::size_t n, std::uint64_t seed) const;

  /// Distinct sorted states belonging to one prompt.
  struct Group {
    std::uint32_t prompt = 0;
    std::vector<State> states;
  };
  /// Receives log p per group/state and fills one coefficient per state.
  using CoeffFn = std::function<void(const std::vector<std::vector<double>>& logp,
                                     std::vector<std::vector<double>>& coeff)>;
  /// Records sum_g sum_s c[g][s] * log p(groups[g].states[s] | prompt) on the
  /// tape; the log-probabilities are written to `logp`.
  diff::Var weighted_logprob(diff::Tape& tape, const std::vector<Prompt>& prompts,
                             const std::vector<Group>& groups, const CoeffFn& coeff,
                             std::vector<std::vector<double>>& logp);

  void save(const std::string& path, nlohmann::json metadata = {}) const;
  /// Restores a checkpoint written by save; the network must match the one
  /// the model was built for.
  static METModel load(const std::string& path, const ReactionNetwork& net);

 private:
  struct Rows {
    std::vector<std::uint32_t> prompt;  // per row
    std::size_t tokens = 0;             // state tokens per row
    std::vector<std::uint32_t> token;   // [rows * tokens]
  };
  /// Log-conditionals [rows, tokens + 1, vocab].
  diff::Var forward(diff::Tape& tape, diff::ParameterStore& store, const std::vector<Prompt>& prompts,
                    const Rows& rows) const;
  /// forward() without gradients, in chunks of kInferenceRows rows to bound
  /// memory; returns the flat [rows, tokens + 1, vocab] log-conditionals.
  std::vector<double> infer(const std::vector<Prompt>& prompts, const Rows& rows) const;
  static constexpr std::size_t kInferenceRows = 256;
  diff::Var block(diff::Tape& tape, diff::ParameterStore& store, std::size_t layer, diff::Var x,
                  std::size_t rows, std::size_t seq) const;
  const std::shared_ptr<const std::vector<std::uint8_t>>& causal_mask(std::size_t seq) const;

  METConfig cfg_;
  std::vector<int> bounds_;
  std::vector<std::string> species_;
  std::size_t num_reactions_;
  std::size_t vocab_;
  PromptNorm norm_;
  std::shared_ptr<const std::vector<std::uint8_t>> vocab_mask_;  // [N * vocab]
  std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> causal_masks_;  // by sequence length
  std::vector<std::shared_ptr<const diff::Tensor>> positions_;  // sinusoidal table by sequence length
  diff::ParameterStore params_;
};

}  // namespace cmet
