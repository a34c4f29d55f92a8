#include "cmet/met.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cmet/autoregressive.hpp"
#include "cmet/diff/checkpoint.hpp"
#include "cmet/diff/ops.hpp"
#include "cmet/error.hpp"

namespace cmet {

using diff::Tape;
using diff::Tensor;
using diff::Var;

Prompt build_prompt(const ReactionNetwork& net, const RateMap& rates, std::span<const int> x0, double t) {
  if (x0.size() != net.num_species()) {
    throw Error(ErrorKind::InvalidArgument, "initial state has " + std::to_string(x0.size()) +
                                                " entries, network has " + std::to_string(net.num_species()) +
                                                " species");
  }
  if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorKind::InvalidArgument, "prompt time must be >= 0");
  Prompt p;
  const std::vector<double> k = net.reaction_rates(rates);
  for (std::size_t j = 0; j < k.size(); ++j) {
    if (!(k[j] > 0.0)) {
      throw Error(ErrorKind::NonPositiveRate,
                  "rate '" + net.reactions[j].rate_symbol + "' must be positive to form a prompt");
    }
    p.values.push_back(std::log(k[j]));
  }
  for (int v : x0) p.values.push_back(static_cast<double>(v));
  p.values.push_back(t);
  return p;
}

PromptNorm PromptNorm::identity(std::size_t length) {
  return {std::vector<double>(length, 0.0), std::vector<double>(length, 1.0)};
}

PromptNorm PromptNorm::fit(const std::vector<Prompt>& prompts) {
  if (prompts.empty()) throw Error(ErrorKind::InvalidArgument, "cannot fit a normalization to no prompts");
  const std::size_t L = prompts.front().values.size();
  PromptNorm n = identity(L);
  const double count = static_cast<double>(prompts.size());
  for (std::size_t j = 0; j < L; ++j) {
    double mean = 0.0;
    for (const Prompt& p : prompts) mean += p.values.at(j);
    mean /= count;
    double var = 0.0;
    for (const Prompt& p : prompts) var += (p.values[j] - mean) * (p.values[j] - mean);
    const double sd = std::sqrt(var / count);
    n.shift[j] = mean;
    n.scale[j] = sd > 1e-12 * std::max(1.0, std::abs(mean)) ? sd : 1.0;
  }
  return n;
}

std::vector<double> PromptNorm::apply(const Prompt& p) const {
  if (p.values.size() != shift.size()) {
    throw Error(ErrorKind::ShapeMismatch, "prompt of length " + std::to_string(p.values.size()) +
                                              ", expected " + std::to_string(shift.size()));
  }
  std::vector<double> out(shift.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (p.values[j] - shift[j]) / scale[j];
  return out;
}

void METConfig::validate() const {
  if (d_emb == 0 || d_ff == 0 || d_l == 0 || h == 0 || d_p == 0 || mlp_width() == 0) {
    throw Error(ErrorKind::InvalidArgument, "transformer sizes must be positive");
  }
  if (d_emb % h != 0) {
    throw Error(ErrorKind::InvalidArgument, "d_emb=" + std::to_string(d_emb) + " is not divisible by h=" +
                                                std::to_string(h));
  }
}

nlohmann::json METConfig::to_json() const {
  return {{"d_emb", d_emb}, {"d_ff", d_ff}, {"d_mlp", mlp_width()}, {"d_l", d_l}, {"h", h}, {"d_p", d_p}};
}

METConfig METConfig::from_json(const nlohmann::json& j) {
  METConfig c;
  c.d_emb = j.value("d_emb", c.d_emb);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.d_mlp = j.value("d_mlp", c.d_mlp);
  c.d_l = j.value("d_l", c.d_l);
  c.h = j.value("h", c.h);
  c.d_p = j.value("d_p", c.d_p);
  return c;
}

std::size_t parameter_count(const METConfig& cfg, const ReactionNetwork& net) {
  const std::size_t L = net.num_species() + net.num_reactions() + 1;
  const std::size_t V = static_cast<std::size_t>(net.max_bound()) + 1;
  const std::size_t d = cfg.d_emb, m = cfg.mlp_width(), f = cfg.d_ff, p = cfg.d_p;
  const std::size_t prompt = L * f + f + f * p + p + p * (p * d) + p * d;
  const std::size_t tokens = V * d;
  const std::size_t block = 4 * d + 3 * d * d + 3 * d + d * d + d + 2 * d * m + m + d;
  const std::size_t output = 2 * d + d * V + V;
  return prompt + tokens + cfg.d_l * block + output;
}

namespace {

Tensor normal_tensor(diff::Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = sd * rng.normal();
  return t;
}

Tensor uniform_tensor(diff::Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return t;
}

std::string layer_name(std::size_t l, const char* part) { return "block" + std::to_string(l) + "." + part; }

// Distinct prompts (first-seen order) and the distinct index of each input.
std::pair<std::vector<Prompt>, std::vector<std::uint32_t>> dedupe_prompts(const std::vector<Prompt>& prompts) {
  std::map<std::vector<double>, std::uint32_t> seen;
  std::vector<Prompt> distinct;
  std::vector<std::uint32_t> uid(prompts.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    const auto [it, fresh] = seen.emplace(prompts[p].values, static_cast<std::uint32_t>(distinct.size()));
    if (fresh) distinct.push_back(prompts[p]);
    uid[p] = it->second;
  }
  return {std::move(distinct), std::move(uid)};
}

}  // namespace

METModel::METModel(const ReactionNetwork& net, METConfig cfg, std::uint64_t seed)
    : cfg_(cfg),
      bounds_(net.bounds),
      species_(net.species_names()),
      num_reactions_(net.num_reactions()),
      vocab_(static_cast<std::size_t>(net.max_bound()) + 1) {
  cfg_.validate();
  if (cfg_.d_mlp == 0) cfg_.d_mlp = cfg_.mlp_width();
  if (bounds_.empty()) throw Error(ErrorKind::InvalidArgument, "network has no species");
  norm_ = PromptNorm::identity(prompt_length());
  vocab_mask_ = bound_mask(bounds_, vocab_);

  const std::size_t d = cfg_.d_emb, N = bounds_.size();
  for (std::size_t seq = cfg_.d_p; seq < cfg_.d_p + N; ++seq) {
    auto mask = std::make_shared<std::vector<std::uint8_t>>(seq * seq, 0);
    for (std::size_t i = 0; i < seq; ++i) {
      for (std::size_t j = i + 1; j < seq; ++j) (*mask)[i * seq + j] = 1;
    }
    causal_masks_.push_back(std::move(mask));
    auto pe = std::make_shared<Tensor>(diff::Shape{seq * d});
    for (std::size_t pos = 0; pos < seq; ++pos) {
      for (std::size_t i = 0; i < d; i += 2) {
        const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
        pe->data[pos * d + i] = std::sin(angle);
        if (i + 1 < d) pe->data[pos * d + i + 1] = std::cos(angle);
      }
    }
    positions_.push_back(std::move(pe));
  }

  Rng rng(seed);
  const std::size_t L = prompt_length(), f = cfg_.d_ff, p = cfg_.d_p, m = cfg_.d_mlp;
  const double resid_sd = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.d_l));
  params_.add("prompt.w1", uniform_tensor({L, f}, 1.0 / std::sqrt(double(L)), rng));
  params_.add("prompt.b1", uniform_tensor({f}, 1.0 / std::sqrt(double(L)), rng));
  params_.add("prompt.w2", uniform_tensor({f, p}, 1.0 / std::sqrt(double(f)), rng));
  params_.add("prompt.b2", uniform_tensor({p}, 1.0 / std::sqrt(double(f)), rng));
  params_.add("prompt.proj.w", normal_tensor({p, p * d}, 0.02, rng));
  params_.add("prompt.proj.b", normal_tensor({p * d}, 0.02, rng));
  params_.add("tok_embed", normal_tensor({vocab_, d}, 0.02, rng));
  for (std::size_t l = 0; l < cfg_.d_l; ++l) {
    params_.add(layer_name(l, "ln1.g"), Tensor({d}, 1.0));
    params_.add(layer_name(l, "ln1.b"), Tensor({d}, 0.0));
    params_.add(layer_name(l, "attn.qkv.w"), normal_tensor({d, 3 * d}, 0.02, rng));
    params_.add(layer_name(l, "attn.qkv.b"), Tensor({3 * d}, 0.0));
    params_.add(layer_name(l, "attn.out.w"), normal_tensor({d, d}, resid_sd, rng));
    params_.add(layer_name(l, "attn.out.b"), Tensor({d}, 0.0));
    params_.add(layer_name(l, "ln2.g"), Tensor({d}, 1.0));
    params_.add(layer_name(l, "ln2.b"), Tensor({d}, 0.0));
    params_.add(layer_name(l, "mlp.fc.w"), normal_tensor({d, m}, 0.02, rng));
    params_.add(layer_name(l, "mlp.fc.b"), Tensor({m}, 0.0));
    params_.add(layer_name(l, "mlp.out.w"), normal_tensor({m, d}, resid_sd, rng));
    params_.add(layer_name(l, "mlp.out.b"), Tensor({d}, 0.0));
  }
  params_.add("ln_f.g", Tensor({d}, 1.0));
  params_.add("ln_f.b", Tensor({d}, 0.0));
  params_.add("head.w", normal_tensor({d, vocab_}, 0.02, rng));
  params_.add("head.b", Tensor({vocab_}, 0.0));
}

void METModel::set_norm(PromptNorm norm) {
  if (norm.shift.size() != prompt_length() || norm.scale.size() != prompt_length()) {
    throw Error(ErrorKind::ShapeMismatch, "prompt normalization has the wrong length");
  }
  norm_ = std::move(norm);
}

const std::shared_ptr<const std::vector<std::uint8_t>>& METModel::causal_mask(std::size_t seq) const {
  return causal_masks_.at(seq - cfg_.d_p);
}

Var METModel::block(Tape& tape, diff::ParameterStore& store, std::size_t l, Var x, std::size_t rows,
                    std::size_t seq) const {
  const std::size_t d = cfg_.d_emb, h = cfg_.h, dk = cfg_.d_k();
  auto P = [&](const char* part) { return tape.param(store.at(layer_name(l, part))); };

  Var a = diff::layer_norm(x, P("ln1.g"), P("ln1.b"));
  Var qkv = diff::linear(a, P("attn.qkv.w"), P("attn.qkv.b"));
  auto heads = [&](std::size_t part) {
    Var t = diff::reshape(diff::slice(qkv, 2, part * d, d), {rows, seq, h, dk});
    return diff::reshape(diff::permute(t, {0, 2, 1, 3}), {rows * h, seq, dk});
  };
  Var q = heads(0), k = heads(1), v = heads(2);
  Var scores = diff::scale(diff::bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
  scores = diff::masked_fill(scores, causal_mask(seq), -std::numeric_limits<double>::infinity());
  Var ctx = diff::bmm(diff::softmax(scores), v);
  ctx = diff::reshape(diff::permute(diff::reshape(ctx, {rows, h, seq, dk}), {0, 2, 1, 3}), {rows, seq, d});
  x = diff::add(x, diff::linear(ctx, P("attn.out.w"), P("attn.out.b")));

  Var mm = diff::layer_norm(x, P("ln2.g"), P("ln2.b"));
  mm = diff::linear(diff::gelu(diff::linear(mm, P("mlp.fc.w"), P("mlp.fc.b"))), P("mlp.out.w"), P("mlp.out.b"));
  return diff::add(x, mm);
}

Var METModel::forward(Tape& tape, diff::ParameterStore& store, const std::vector<Prompt>& prompts,
                      const Rows& rows) const {
  const std::size_t d = cfg_.d_emb, dp = cfg_.d_p, T = rows.tokens, R = rows.prompt.size();
  auto P = [&](const std::string& name) { return tape.param(store.at(name)); };

  Tensor raw({prompts.size(), prompt_length()});
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::vector<double> z = norm_.apply(prompts[i]);
    std::copy(z.begin(), z.end(), raw.data.begin() + static_cast<std::ptrdiff_t>(i * prompt_length()));
  }
  Var hidden = diff::tanh(diff::linear(tape.constant(std::move(raw)), P("prompt.w1"), P("prompt.b1")));
  hidden = diff::tanh(diff::linear(hidden, P("prompt.w2"), P("prompt.b2")));
  Var pblock = diff::linear(hidden, P("prompt.proj.w"), P("prompt.proj.b"));  // [P, dp*d]

  Var x = diff::reshape(diff::embedding(pblock, rows.prompt), {R, dp, d});
  if (T > 0) {
    Var tok = diff::reshape(diff::embedding(P("tok_embed"), rows.token), {R, T, d});
    x = diff::concat({x, tok}, 1);
  }
  const std::size_t seq = dp + T;
  x = diff::add_bias(x, tape.constant(*positions_.at(T)));
  for (std::size_t l = 0; l < cfg_.d_l; ++l) x = block(tape, store, l, x, R, seq);
  x = diff::layer_norm(diff::slice(x, 1, dp - 1, T + 1), P("ln_f.g"), P("ln_f.b"));
  Var logits = diff::linear(x, P("head.w"), P("head.b"));  // [R, T+1, V]
  auto mask = std::make_shared<const std::vector<std::uint8_t>>(
      vocab_mask_->begin(), vocab_mask_->begin() + static_cast<std::ptrdiff_t>((T + 1) * vocab_));
  logits = diff::masked_fill(logits, std::move(mask), -std::numeric_limits<double>::infinity());
  return diff::log_softmax(logits);
}

std::vector<double> METModel::infer(const std::vector<Prompt>& prompts, const Rows& rows) const {
  // Inference tapes never write into parameters.
  auto& store = const_cast<diff::ParameterStore&>(params_);
  const std::size_t R = rows.prompt.size(), T = rows.tokens, width = (T + 1) * vocab_;
  std::vector<double> out(R * width);
  for (std::size_t begin = 0; begin < R; begin += kInferenceRows) {
    const std::size_t end = std::min(R, begin + kInferenceRows);
    Rows chunk;
    chunk.tokens = T;
    std::vector<Prompt> used;
    std::map<std::uint32_t, std::uint32_t> local;
    for (std::size_t r = begin; r < end; ++r) {
      const auto [it, fresh] = local.emplace(rows.prompt[r], static_cast<std::uint32_t>(used.size()));
      if (fresh) used.push_back(prompts[rows.prompt[r]]);
      chunk.prompt.push_back(it->second);
    }
    chunk.token.assign(rows.token.begin() + static_cast<std::ptrdiff_t>(begin * T),
                       rows.token.begin() + static_cast<std::ptrdiff_t>(end * T));
    Tape tape(false);
    const Tensor& lp = tape.value(forward(tape, store, used, chunk));
    std::copy(lp.data.begin(), lp.data.end(), out.begin() + static_cast<std::ptrdiff_t>(begin * width));
  }
  return out;
}

std::vector<std::vector<double>> METModel::conditionals(const Prompt& prompt, std::span<const int> x) const {
  const std::size_t N = bounds_.size();
  if (x.size() != N) throw Error(ErrorKind::ShapeMismatch, "state length does not match the network");
  Rows rows;
  rows.prompt = {0};
  rows.tokens = N - 1;
  for (std::size_t i = 0; i + 1 < N; ++i) rows.token.push_back(static_cast<std::uint32_t>(std::clamp(x[i], 0, bounds_[i])));
  const std::vector<double> lp = infer({prompt}, rows);
  std::vector<std::vector<double>> out(N, std::vector<double>(vocab_));
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t v = 0; v < vocab_; ++v) out[i][v] = std::exp(lp[i * vocab_ + v]);
  }
  return out;
}

double METModel::logprob(const Prompt& prompt, std::span<const int> x) const {
  return logprob({prompt}, {Item{0, State(x.begin(), x.end())}}).front();
}

std::vector<double> METModel::logprob(const std::vector<Prompt>& prompts, const std::vector<Item>& items) const {
  const std::size_t N = bounds_.size();
  std::vector<double> out(items.size(), -std::numeric_limits<double>::infinity());
  const auto [distinct, uid] = dedupe_prompts(prompts);
  // One row per distinct (prompt, x_<N).
  std::map<std::pair<std::uint32_t, State>, std::uint32_t> row_of;
  std::vector<bool> valid(items.size(), false);
  for (std::size_t k = 0; k < items.size(); ++k) {
    const State& s = items[k].state;
    if (s.size() != N) throw Error(ErrorKind::ShapeMismatch, "state length does not match the network");
    if (items[k].prompt >= prompts.size()) throw Error(ErrorKind::InvalidArgument, "prompt index out of range");
    bool ok = true;
    for (std::size_t i = 0; i < N; ++i) ok = ok && s[i] >= 0 && s[i] <= bounds_[i];
    if (!ok) continue;
    valid[k] = true;
    row_of.emplace(std::pair(uid[items[k].prompt], State(s.begin(), s.end() - 1)), 0);
  }
  if (row_of.empty()) return out;
  Rows rows;
  rows.tokens = N - 1;
  for (auto& [key, id] : row_of) {
    id = static_cast<std::uint32_t>(rows.prompt.size());
    rows.prompt.push_back(key.first);
    for (int v : key.second) rows.token.push_back(static_cast<std::uint32_t>(v));
  }
  const std::vector<double> lp = infer(distinct, rows);
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (!valid[k]) continue;
    const State& s = items[k].state;
    const std::size_t r = row_of.at({uid[items[k].prompt], State(s.begin(), s.end() - 1)});
    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) acc += lp[(r * N + i) * vocab_ + static_cast<std::size_t>(s[i])];
    out[k] = acc;
  }
  return out;
}

std::vector<std::vector<State>> METModel::sample_batch(const std::vector<Prompt>& prompts,
                                                       std::size_t n_per_prompt, std::uint64_t seed) const {
  const std::size_t N = bounds_.size();
  std::vector<std::vector<State>> out(prompts.size(), std::vector<State>(n_per_prompt, State(N, 0)));
  if (prompts.empty() || n_per_prompt == 0) return out;
  std::vector<Rng> rngs;
  rngs.reserve(prompts.size());
  for (std::size_t p = 0; p < prompts.size(); ++p) rngs.emplace_back(stream_seed(seed, p));
  const auto [distinct, uid] = dedupe_prompts(prompts);
  std::vector<double> probs(vocab_);
  for (std::size_t i = 0; i < N; ++i) {
    // Rows are the distinct (prompt, x_<i) prefixes drawn so far.
    std::map<std::pair<std::uint32_t, State>, std::uint32_t> row_of;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      for (const State& s : out[p]) row_of.emplace(std::pair(uid[p], State(s.begin(), s.begin() + i)), 0);
    }
    Rows rows;
    rows.tokens = i;
    for (auto& [key, id] : row_of) {
      id = static_cast<std::uint32_t>(rows.prompt.size());
      rows.prompt.push_back(key.first);
      for (int v : key.second) rows.token.push_back(static_cast<std::uint32_t>(v));
    }
    const std::vector<double> lp = infer(distinct, rows);
    const std::size_t width = (i + 1) * vocab_;
    for (std::size_t p = 0; p < prompts.size(); ++p) {
      for (State& s : out[p]) {
        const std::size_t r = row_of.at({uid[p], State(s.begin(), s.begin() + i)});
        const double* row = lp.data() + r * width + i * vocab_;
        double total = 0.0;
        for (std::size_t v = 0; v < vocab_; ++v) total += (probs[v] = std::exp(row[v]));
        s[i] = static_cast<int>(rngs[p].categorical(probs, total));
      }
    }
  }
  return out;
}

std::vector<State> METModel::sample(const Prompt& prompt, std::size_t n, std::uint64_t seed) const {
  return sample_batch({prompt}, n, seed).front();
}

Var METModel::weighted_logprob(Tape& tape, const std::vector<Prompt>& prompts, const std::vector<Group>& groups,
                               const CoeffFn& coeff, std::vector<std::vector<double>>& logp) {
  const std::size_t N = bounds_.size();
  std::map<std::pair<std::uint32_t, State>, std::uint32_t> row_of;
  for (const Group& g : groups) {
    for (const State& s : g.states) {
      for (std::size_t i = 0; i < N; ++i) {
        if (s.size() != N || s[i] < 0 || s[i] > bounds_[i]) {
          throw Error(ErrorKind::InvalidArgument, "state outside the bounds");
        }
      }
      row_of.emplace(std::pair(g.prompt, State(s.begin(), s.end() - 1)), 0);
    }
  }
  Rows rows;
  rows.tokens = N - 1;
  for (auto& [key, id] : row_of) {
    id = static_cast<std::uint32_t>(rows.prompt.size());
    rows.prompt.push_back(key.first);
    for (int v : key.second) rows.token.push_back(static_cast<std::uint32_t>(v));
  }
  Var lpv = forward(tape, params_, prompts, rows);
  const Tensor& lp = tape.value(lpv);
  // flat offset of each (group, state, position) entry
  std::vector<std::vector<std::size_t>> base(groups.size());
  logp.assign(groups.size(), {});
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const State& s : groups[g].states) {
      const std::size_t r = row_of.at({groups[g].prompt, State(s.begin(), s.end() - 1)});
      base[g].push_back(r * N * vocab_);
      double acc = 0.0;
      for (std::size_t i = 0; i < N; ++i) acc += lp.data[r * N * vocab_ + i * vocab_ + static_cast<std::size_t>(s[i])];
      logp[g].push_back(acc);
    }
  }
  std::vector<std::vector<double>> c(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) c[g].assign(groups[g].states.size(), 0.0);
  coeff(logp, c);
  auto w = std::make_shared<Tensor>(lp.shape, 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (c[g].size() != groups[g].states.size()) throw Error(ErrorKind::ShapeMismatch, "coefficient count mismatch");
    for (std::size_t s = 0; s < groups[g].states.size(); ++s) {
      for (std::size_t i = 0; i < N; ++i) {
        w->data[base[g][s] + i * vocab_ + static_cast<std::size_t>(groups[g].states[s][i])] += c[g][s];
      }
    }
  }
  return diff::weighted_sum(lpv, std::move(w));
}

void METModel::save(const std::string& path, nlohmann::json metadata) const {
  metadata["kind"] = "met";
  metadata["config"] = cfg_.to_json();
  metadata["bounds"] = bounds_;
  metadata["species"] = species_;
  metadata["num_reactions"] = num_reactions_;
  metadata["norm"] = {{"shift", norm_.shift}, {"scale", norm_.scale}};
  metadata["parameter_count"] = params_.element_count();
  diff::save_checkpoint(path, params_, std::move(metadata));
}

METModel METModel::load(const std::string& path, const ReactionNetwork& net) {
  const nlohmann::json meta = diff::read_checkpoint_metadata(path);
  if (meta.value("kind", "") != "met") throw Error(ErrorKind::BadFormat, path + ": not a MET checkpoint");
  if (meta.at("bounds").get<std::vector<int>>() != net.bounds ||
      meta.at("num_reactions").get<std::size_t>() != net.num_reactions()) {
    throw Error(ErrorKind::ShapeMismatch, path + ": checkpoint was trained for a different network");
  }
  METModel m(net, METConfig::from_json(meta.at("config")), 0);
  diff::load_checkpoint(path, m.params_);
  PromptNorm n;
  n.shift = meta.at("norm").at("shift").get<std::vector<double>>();
  n.scale = meta.at("norm").at("scale").get<std::vector<double>>();
  m.set_norm(std::move(n));
  return m;
}

}  // namespace cmet
