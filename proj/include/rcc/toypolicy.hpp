#pragma once

// A log-linear conditional sequence scorer with hand-derived gradients.
//
//   logits_t = W * context + B[prev_t] + b,   prev_0 = kBeginToken
//   log p(y_t | y_{t-1}, context) = log_softmax(logits_t)[y_t]
//
// The trained copy plays the policy, a frozen copy of its initial
// parameters plays the reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rcc/error.hpp"
#include "rcc/io.hpp"
#include "rcc/optim.hpp"
#include "rcc/random.hpp"
#include "rcc/rankloss.hpp"

namespace rcc::toy {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

/// Previous-token row used for the first position.
inline constexpr Token kBeginToken = 0;

class ToyPolicy {
 public:
  ToyPolicy() = default;
  ToyPolicy(int vocab_size, int ctx_dim) : vocab_(vocab_size), dim_(ctx_dim) {
    require(vocab_size >= 1, "vocab_size must be positive");
    require(ctx_dim >= 1, "ctx_dim must be positive");
    params_.assign(parameter_count(vocab_size, ctx_dim), 0.0);
  }

  static std::size_t parameter_count(int vocab_size, int ctx_dim) {
    const auto v = static_cast<std::size_t>(vocab_size);
    return v * static_cast<std::size_t>(ctx_dim) + v * v + v;
  }

  /// Gaussian initialisation with the given standard deviation.
  static ToyPolicy random(int vocab_size, int ctx_dim, double scale, Rng& rng) {
    ToyPolicy policy(vocab_size, ctx_dim);
    for (auto& p : policy.params_) p = scale * rng.normal();
    return policy;
  }

  [[nodiscard]] int vocab_size() const { return vocab_; }
  [[nodiscard]] int ctx_dim() const { return dim_; }

  // Layout: weights (V x d, row-major), bigram (V x V, row = previous token), bias (V).
  [[nodiscard]] std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  [[nodiscard]] std::span<const double> weights() const { return std::span(params_).subspan(0, weights_size()); }
  std::span<double> weights() { return std::span(params_).subspan(0, weights_size()); }
  [[nodiscard]] std::span<const double> bigram() const { return std::span(params_).subspan(weights_size(), bigram_size()); }
  std::span<double> bigram() { return std::span(params_).subspan(weights_size(), bigram_size()); }
  [[nodiscard]] std::span<const double> bias() const { return std::span(params_).subspan(weights_size() + bigram_size()); }
  std::span<double> bias() { return std::span(params_).subspan(weights_size() + bigram_size()); }

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

 private:
  [[nodiscard]] std::size_t weights_size() const { return static_cast<std::size_t>(vocab_) * static_cast<std::size_t>(dim_); }
  [[nodiscard]] std::size_t bigram_size() const { return static_cast<std::size_t>(vocab_) * static_cast<std::size_t>(vocab_); }

  int vocab_ = 0;
  int dim_ = 0;
  std::vector<double> params_;
};

struct SequenceScore {
  double sequence_logprob = 0.0;
  std::vector<double> per_token_logprobs;
};

namespace detail {

inline void check_inputs(const ToyPolicy& policy, std::span<const double> context,
                         std::span<const Token> tokens, std::span<const Token> prompt = {}) {
  require(context.size() == static_cast<std::size_t>(policy.ctx_dim()), "context length does not match ctx_dim");
  require(!tokens.empty(), "token sequence is empty");
  for (Token t : tokens) {
    require(t >= 0 && t < policy.vocab_size(), "token id " + std::to_string(t) + " out of range");
  }
  for (Token t : prompt) {
    require(t >= 0 && t < policy.vocab_size(), "prompt token id " + std::to_string(t) + " out of range");
  }
}

/// W * context + b, shared by every position of a sequence.
inline std::vector<double> context_logits(const ToyPolicy& policy, std::span<const double> context) {
  const auto v = static_cast<std::size_t>(policy.vocab_size());
  const auto d = static_cast<std::size_t>(policy.ctx_dim());
  const auto weights = policy.weights();
  const auto bias = policy.bias();
  std::vector<double> out(v);
  for (std::size_t r = 0; r < v; ++r) {
    double acc = bias[r];
    for (std::size_t c = 0; c < d; ++c) acc += weights[r * d + c] * context[c];
    out[r] = acc;
  }
  return out;
}

/// Fills `logits` for one position and turns it into log-probabilities in place.
inline void position_log_softmax(const ToyPolicy& policy, std::span<const double> base, Token prev,
                                 std::span<double> logits) {
  const auto v = static_cast<std::size_t>(policy.vocab_size());
  const auto row = policy.bigram().subspan(static_cast<std::size_t>(prev) * v, v);
  double hi = -INFINITY;
  for (std::size_t k = 0; k < v; ++k) {
    logits[k] = base[k] + row[k];
    hi = std::max(hi, logits[k]);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < v; ++k) total += std::exp(logits[k] - hi);
  const double log_norm = hi + std::log(total);
  for (std::size_t k = 0; k < v; ++k) logits[k] -= log_norm;
}

}  // namespace detail

/// Scores `tokens` as a continuation of `prompt`; only the last prompt token
/// reaches the bigram term.
inline SequenceScore score_continuation(const ToyPolicy& policy, std::span<const double> context,
                                        std::span<const Token> prompt, std::span<const Token> tokens) {
  detail::check_inputs(policy, context, tokens, prompt);
  const auto base = detail::context_logits(policy, context);
  std::vector<double> logp(static_cast<std::size_t>(policy.vocab_size()));
  SequenceScore out;
  out.per_token_logprobs.reserve(tokens.size());
  Token prev = prompt.empty() ? kBeginToken : prompt.back();
  for (Token t : tokens) {
    detail::position_log_softmax(policy, base, prev, logp);
    const double lp = logp[static_cast<std::size_t>(t)];
    out.per_token_logprobs.push_back(lp);
    out.sequence_logprob += lp;
    prev = t;
  }
  return out;
}

inline SequenceScore score_sequence(const ToyPolicy& policy, std::span<const double> context,
                                    std::span<const Token> tokens) {
  return score_continuation(policy, context, {}, tokens);
}

/// Adds scale * d(sequence_logprob)/d(params) into `grad` and returns the
/// sequence log-prob.
inline double accumulate_score_gradient(const ToyPolicy& policy, std::span<const double> context,
                                        std::span<const Token> tokens, double scale,
                                        std::span<double> grad) {
  detail::check_inputs(policy, context, tokens);
  require(grad.size() == policy.params().size(), "gradient buffer has the wrong size");
  const auto v = static_cast<std::size_t>(policy.vocab_size());
  const auto d = static_cast<std::size_t>(policy.ctx_dim());
  const auto base = detail::context_logits(policy, context);
  std::vector<double> logp(v);
  std::vector<double> shared(v, 0.0);  // sum over positions of (onehot - softmax)
  auto grad_bigram = grad.subspan(v * d, v * v);
  double total = 0.0;
  Token prev = kBeginToken;
  for (Token t : tokens) {
    detail::position_log_softmax(policy, base, prev, logp);
    const auto tok = static_cast<std::size_t>(t);
    total += logp[tok];
    auto row = grad_bigram.subspan(static_cast<std::size_t>(prev) * v, v);
    for (std::size_t k = 0; k < v; ++k) {
      const double g = (k == tok ? 1.0 : 0.0) - std::exp(logp[k]);
      shared[k] += g;
      row[k] += scale * g;
    }
    prev = t;
  }
  auto grad_weights = grad.subspan(0, v * d);
  auto grad_bias = grad.subspan(v * d + v * v, v);
  for (std::size_t r = 0; r < v; ++r) {
    const double g = scale * shared[r];
    grad_bias[r] += g;
    for (std::size_t c = 0; c < d; ++c) grad_weights[r * d + c] += g * context[c];
  }
  return total;
}

/// Gradient of sequence_logprob with respect to every parameter, laid out
/// like ToyPolicy::params().
inline std::vector<double> score_gradient(const ToyPolicy& policy, std::span<const double> context,
                                          std::span<const Token> tokens) {
  std::vector<double> grad(policy.params().size(), 0.0);
  accumulate_score_gradient(policy, context, tokens, 1.0, grad);
  return grad;
}

/// Indices sorted by descending sequence log-prob; ties keep input order.
inline std::vector<std::size_t> rank_chain(const ToyPolicy& policy, std::span<const double> context,
                                           std::span<const TokenSeq> chain_tokens) {
  require(chain_tokens.size() >= 2, "rank_chain needs at least two sequences");
  std::vector<double> scores;
  scores.reserve(chain_tokens.size());
  for (const auto& seq : chain_tokens) scores.push_back(score_sequence(policy, context, seq).sequence_logprob);
  std::vector<std::size_t> order(chain_tokens.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// ---------------------------------------------------------------------------
// Synthetic ordered chains

struct SynthExample {
  std::vector<double> context;
  std::vector<TokenSeq> chain_tokens;          // best-first, [0] is clean
  std::vector<int> corruption_counts;          // 0, 1, 2, ...

  friend bool operator==(const SynthExample&, const SynthExample&) = default;
};

struct SynthConfig {
  int count = 1000;
  int vocab_size = 32;
  int ctx_dim = 16;
  int seq_len = 24;
  int chain_len = 4;
  std::uint64_t seed = 0;
  /// Each negative is the clean sequence with one independently drawn
  /// corruption, instead of a nested chain. Counts are then [0, 1, 1, ...].
  bool independent = false;
  /// Standard deviation of the hidden generator's parameters.
  double teacher_scale = 1.0;

  void validate() const {
    require(count >= 0, "count must be non-negative");
    require(vocab_size >= 2, "vocab_size must be at least 2");
    require(ctx_dim >= 1, "ctx_dim must be positive");
    require(chain_len >= 1, "chain_len must be at least 1");
    require(chain_len <= seq_len, "chain_len must not exceed seq_len");
  }
};

/// Clean sequences are sampled from a hidden random policy conditioned on the
/// context; rank k replaces exactly k positions with different tokens, and
/// the positions of rank k contain those of rank k - 1.
inline std::vector<SynthExample> make_synth_dataset(const SynthConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const auto teacher = ToyPolicy::random(config.vocab_size, config.ctx_dim, config.teacher_scale, rng);
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto len = static_cast<std::size_t>(config.seq_len);

  std::vector<SynthExample> out;
  out.reserve(static_cast<std::size_t>(config.count));
  std::vector<double> logp(v);
  std::vector<std::size_t> positions(len);
  for (int n = 0; n < config.count; ++n) {
    SynthExample ex;
    ex.context.resize(static_cast<std::size_t>(config.ctx_dim));
    for (auto& c : ex.context) c = rng.normal();

    const auto base = detail::context_logits(teacher, ex.context);
    TokenSeq clean;
    clean.reserve(len);
    Token prev = kBeginToken;
    for (std::size_t t = 0; t < len; ++t) {
      detail::position_log_softmax(teacher, base, prev, logp);
      double u = rng.uniform();
      std::size_t pick = v - 1;
      for (std::size_t k = 0; k < v; ++k) {
        u -= std::exp(logp[k]);
        if (u < 0.0) {
          pick = k;
          break;
        }
      }
      clean.push_back(static_cast<Token>(pick));
      prev = static_cast<Token>(pick);
    }

    auto replacement = [&](Token original) {
      auto r = static_cast<Token>(rng.below(v - 1));
      return r >= original ? r + 1 : r;
    };

    ex.chain_tokens.push_back(clean);
    ex.corruption_counts.push_back(0);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    rng.shuffle(std::span(positions));
    TokenSeq nested = clean;
    for (int k = 1; k <= config.chain_len; ++k) {
      if (config.independent) {
        TokenSeq seq = clean;
        const auto p = static_cast<std::size_t>(rng.below(len));
        seq[p] = replacement(clean[p]);
        ex.chain_tokens.push_back(std::move(seq));
        ex.corruption_counts.push_back(1);
      } else {
        const auto p = positions[static_cast<std::size_t>(k - 1)];
        nested[p] = replacement(clean[p]);
        ex.chain_tokens.push_back(nested);
        ex.corruption_counts.push_back(k);
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline io::json to_json(const SynthExample& ex) {
  return {{"context", ex.context}, {"chain_tokens", ex.chain_tokens}, {"corruption_counts", ex.corruption_counts}};
}

inline SynthExample synth_from_json(const io::json& record) {
  SynthExample ex;
  ex.context = io::field<std::vector<double>>(record, "context");
  ex.chain_tokens = io::field<std::vector<TokenSeq>>(record, "chain_tokens");
  ex.corruption_counts = io::field<std::vector<int>>(record, "corruption_counts");
  require(ex.chain_tokens.size() == ex.corruption_counts.size(), "chain_tokens and corruption_counts differ in length");
  return ex;
}

// ---------------------------------------------------------------------------
// Training

/// A context with candidate sequences ordered best-first; sequences[0] is
/// also the next-token-prediction target.
struct TrainingChain {
  std::vector<double> context;
  std::vector<TokenSeq> sequences;
};

inline TrainingChain to_training_chain(const SynthExample& ex) { return {ex.context, ex.chain_tokens}; }

inline std::vector<TrainingChain> to_training_chains(std::span<const SynthExample> examples) {
  std::vector<TrainingChain> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(to_training_chain(ex));
  return out;
}

/// Keeps the first `size` sequences of every chain.
inline std::vector<TrainingChain> truncate_chains(std::span<const TrainingChain> chains, std::size_t size) {
  std::vector<TrainingChain> out(chains.begin(), chains.end());
  for (auto& c : out) {
    require(c.sequences.size() >= size, "chain shorter than requested truncation");
    c.sequences.resize(size);
  }
  return out;
}

struct TrainConfig {
  int steps = 500;
  int batch_size = 8;
  std::uint64_t seed = 0;
  optim::AdamWConfig optimizer{};

  void validate() const {
    require(steps >= 1, "steps must be positive");
    require(batch_size >= 1, "batch_size must be positive");
    optimizer.validate();
  }
};

struct TracePoint {
  int step = 0;
  double chain_loss = 0.0;
  double ntp_loss = 0.0;
  double total = 0.0;
};

struct TrainResult {
  ToyPolicy policy;
  std::vector<TracePoint> trace;
};

/// Responses per chain the objective consumes: the top two for BT_DPO,
/// the whole chain otherwise.
inline std::size_t responses_used(rankloss::Objective objective, std::size_t chain_size) {
  return objective == rankloss::Objective::BtDpo ? std::min<std::size_t>(2, chain_size) : chain_size;
}

/// AdamW on the batch mean of combined_loss. The reference is a frozen copy
/// of `initial`. Single-threaded and deterministic for a fixed seed.
inline TrainResult train(const ToyPolicy& initial, std::span<const TrainingChain> dataset,
                         const rankloss::LossConfig& loss_config, const TrainConfig& train_config) {
  loss_config.validate();
  train_config.validate();
  require(!dataset.empty(), "training dataset is empty");
  const std::size_t min_size = loss_config.objective == rankloss::Objective::PlDpo ? 1 : 2;
  for (const auto& c : dataset) {
    require(c.sequences.size() >= min_size, "chain too short for the selected objective");
  }

  const ToyPolicy& reference = initial;
  std::vector<std::vector<double>> ref_logprobs;
  ref_logprobs.reserve(dataset.size());
  for (const auto& c : dataset) {
    const auto used = responses_used(loss_config.objective, c.sequences.size());
    std::vector<double> lps;
    for (std::size_t i = 0; i < used; ++i) lps.push_back(score_sequence(reference, c.context, c.sequences[i]).sequence_logprob);
    ref_logprobs.push_back(std::move(lps));
  }

  TrainResult result{initial, {}};
  ToyPolicy& policy = result.policy;
  optim::AdamW optimizer(policy.params().size(), train_config.optimizer);
  Rng rng(train_config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  std::vector<double> grad(policy.params().size());
  const double inv_batch = 1.0 / static_cast<double>(train_config.batch_size);
  for (int step = 0; step < train_config.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    TracePoint point{step, 0.0, 0.0, 0.0};
    for (int b = 0; b < train_config.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(std::span(order));
        cursor = 0;
      }
      const auto idx = order[cursor++];
      const auto& chain = dataset[idx];
      const auto used = ref_logprobs[idx].size();

      rankloss::ScoredChain scored;
      scored.ref_logprobs = ref_logprobs[idx];
      for (std::size_t i = 0; i < used; ++i) {
        scored.policy_logprobs.push_back(score_sequence(policy, chain.context, chain.sequences[i]).sequence_logprob);
      }
      const auto gt = score_sequence(policy, chain.context, chain.sequences.front());
      const bool finite = std::isfinite(gt.sequence_logprob) &&
                          std::all_of(scored.policy_logprobs.begin(), scored.policy_logprobs.end(),
                                      [](double x) { return std::isfinite(x); });
      if (!finite) {
        fail(ErrorKind::Invariant, "non-finite log-prob at step " + std::to_string(step) + " (chain " + std::to_string(idx) + ")");
      }
      const auto loss = rankloss::combined_loss(loss_config, scored, gt.per_token_logprobs);
      if (!std::isfinite(loss.value)) {
        fail(ErrorKind::Invariant, "non-finite loss at step " + std::to_string(step) + " (chain " + std::to_string(idx) + ")");
      }
      point.chain_loss += inv_batch * loss.chain_value;
      point.ntp_loss += inv_batch * loss.ntp_value;
      point.total += inv_batch * loss.value;

      for (std::size_t i = 0; i < used; ++i) {
        // Loss gradient is minimised, score gradient is of log-prob.
        const double g = loss.grad_policy_logprobs[i];
        if (g != 0.0) accumulate_score_gradient(policy, chain.context, chain.sequences[i], inv_batch * g, grad);
      }
      // The NTP gradient is uniform over tokens, so it is a scaled sequence gradient.
      const double ntp_scale = loss.grad_token_logprobs.empty() ? 0.0 : loss.grad_token_logprobs.front();
      if (ntp_scale != 0.0) accumulate_score_gradient(policy, chain.context, chain.sequences.front(), inv_batch * ntp_scale, grad);
    }
    result.trace.push_back(point);
    optimizer.step(policy.params(), grad);
  }
  for (double p : policy.params()) {
    if (!std::isfinite(p)) fail(ErrorKind::Invariant, "training produced non-finite parameters");
  }
  return result;
}

inline std::string trace_to_csv(std::span<const TracePoint> trace) {
  std::string out = "step,chain_loss,ntp_loss,total\n";
  for (const auto& p : trace) {
    out += std::to_string(p.step) + ',' + io::format_double(p.chain_loss) + ',' +
           io::format_double(p.ntp_loss) + ',' + io::format_double(p.total) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
//   rcc-toypolicy 1
//   vocab_size <V>
//   ctx_dim <d>
//   params <count>
//   <one shortest-round-trip double per line>

inline constexpr int kCheckpointVersion = 1;

inline std::string checkpoint_to_string(const ToyPolicy& policy) {
  std::string out = "rcc-toypolicy " + std::to_string(kCheckpointVersion) + '\n';
  out += "vocab_size " + std::to_string(policy.vocab_size()) + '\n';
  out += "ctx_dim " + std::to_string(policy.ctx_dim()) + '\n';
  out += "params " + std::to_string(policy.params().size()) + '\n';
  for (double p : policy.params()) {
    out += io::format_double(p);
    out += '\n';
  }
  return out;
}

inline ToyPolicy checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "rcc-toypolicy") fail(ErrorKind::Io, "not a toy policy checkpoint");
  if (version != kCheckpointVersion) fail(ErrorKind::Io, "unsupported checkpoint version " + std::to_string(version));
  std::string key;
  int vocab = 0, dim = 0;
  std::size_t count = 0;
  in >> key >> vocab;
  if (key != "vocab_size") fail(ErrorKind::Io, "checkpoint: expected vocab_size");
  in >> key >> dim;
  if (key != "ctx_dim") fail(ErrorKind::Io, "checkpoint: expected ctx_dim");
  in >> key >> count;
  if (key != "params" || !in) fail(ErrorKind::Io, "checkpoint: expected params");
  if (vocab < 1 || dim < 1 || count != ToyPolicy::parameter_count(vocab, dim)) {
    fail(ErrorKind::Io, "checkpoint: inconsistent dimensions");
  }
  ToyPolicy policy(vocab, dim);
  auto params = policy.params();
  std::string word;
  for (std::size_t i = 0; i < count; ++i) {
    if (!(in >> word)) fail(ErrorKind::Io, "checkpoint: truncated parameter list");
    try {
      params[i] = io::parse_double(word);
    } catch (const Error& e) {
      fail(ErrorKind::Io, std::string("checkpoint: ") + e.what());
    }
  }
  return policy;
}

inline void save_checkpoint(const std::filesystem::path& path, const ToyPolicy& policy) {
  io::write_atomic(path, checkpoint_to_string(policy));
}

inline ToyPolicy load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_string(io::read_text(path));
}

}  // namespace rcc::toy
