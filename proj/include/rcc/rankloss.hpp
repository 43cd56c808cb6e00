#pragma once

// Ranking and preference objectives over sequence log-probabilities.
//
// Every objective returns its value together with the exact gradient with
// respect to the policy log-probabilities it consumed. Reference
// log-probabilities are constants. All functions are pure.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rcc/error.hpp"

namespace rcc::rankloss {

enum class Objective { PlDpo, BtDpo, Mpo, Hinge, RankNet };

inline std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::PlDpo: return "PL_DPO";
    case Objective::BtDpo: return "BT_DPO";
    case Objective::Mpo: return "MPO";
    case Objective::Hinge: return "HINGE";
    case Objective::RankNet: return "RANKNET";
  }
  return "PL_DPO";
}

inline std::optional<Objective> parse_objective(std::string_view name) {
  if (name == "PL_DPO" || name == "RANK") return Objective::PlDpo;
  if (name == "BT_DPO" || name == "DPO") return Objective::BtDpo;
  if (name == "MPO") return Objective::Mpo;
  if (name == "HINGE") return Objective::Hinge;
  if (name == "RANKNET") return Objective::RankNet;
  return std::nullopt;
}

/// Responses ordered best-first; index is the ground-truth rank.
struct ScoredChain {
  std::vector<double> policy_logprobs;
  std::vector<double> ref_logprobs;

  [[nodiscard]] std::size_t size() const { return policy_logprobs.size(); }
};

struct LossConfig {
  Objective objective = Objective::PlDpo;
  double beta = 0.3;
  double ntp_weight = 0.1;

  void validate() const {
    require(beta > 0.0 && std::isfinite(beta), "beta must be positive");
    require(ntp_weight >= 0.0 && std::isfinite(ntp_weight), "ntp_weight must be non-negative");
  }
};

struct LossResult {
  double value = 0.0;
  std::vector<double> grad_policy_logprobs;
};

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    require(std::isfinite(v), std::string(what) + " contains a non-finite entry");
  }
}

inline void validate(const ScoredChain& chain) {
  require(!chain.policy_logprobs.empty(), "scored chain is empty");
  require(chain.policy_logprobs.size() == chain.ref_logprobs.size(),
          "policy and reference log-probs differ in length");
  require_finite(chain.policy_logprobs, "policy_logprobs");
  require_finite(chain.ref_logprobs, "ref_logprobs");
}

inline void validate_beta(double beta) {
  require(beta > 0.0 && std::isfinite(beta), "beta must be positive");
}

}  // namespace detail

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// suffix[i] = log sum_{j >= i} exp(values[j]).
inline std::vector<double> suffix_log_sum_exp(std::span<const double> values) {
  std::vector<double> suffix(values.size());
  double acc = -std::numeric_limits<double>::infinity();
  for (std::size_t i = values.size(); i-- > 0;) {
    const double hi = std::max(acc, values[i]);
    acc = hi + std::log(std::exp(acc - hi) + std::exp(values[i] - hi));
    suffix[i] = acc;
  }
  return suffix;
}

/// Negative log Plackett-Luce likelihood of the index order and its gradient
/// with respect to the rewards.
inline LossResult pl_negative_log_likelihood(std::span<const double> rewards) {
  const auto n = rewards.size();
  const auto suffix = suffix_log_sum_exp(rewards);
  LossResult out;
  out.grad_policy_logprobs.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.value += suffix[i] - rewards[i];
  // d/dr_k = sum_{i <= k} softmax over the tail starting at i, minus one.
  for (std::size_t k = 0; k < n; ++k) {
    double mass = 0.0;
    for (std::size_t i = 0; i <= k; ++i) mass += std::exp(rewards[k] - suffix[i]);
    out.grad_policy_logprobs[k] = mass - 1.0;
  }
  // Rounding can leave a tiny negative value when the order is certain.
  out.value = std::max(out.value, 0.0);
  return out;
}

inline double pl_probability(std::span<const double> rewards) {
  require(!rewards.empty(), "rewards must be non-empty");
  detail::require_finite(rewards, "rewards");
  const auto nll = pl_negative_log_likelihood(rewards);
  return std::min(1.0, std::exp(-nll.value));
}

inline LossResult pl_dpo_loss(const ScoredChain& chain, double beta) {
  detail::validate(chain);
  detail::validate_beta(beta);
  std::vector<double> rewards(chain.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    rewards[i] = beta * (chain.policy_logprobs[i] - chain.ref_logprobs[i]);
  }
  auto out = pl_negative_log_likelihood(rewards);
  for (auto& g : out.grad_policy_logprobs) g *= beta;
  return out;
}

/// Gradient order: {winner, loser}.
inline LossResult bt_dpo_loss(double winner_lp, double loser_lp, double winner_ref_lp,
                              double loser_ref_lp, double beta) {
  const double inputs[] = {winner_lp, loser_lp, winner_ref_lp, loser_ref_lp};
  detail::require_finite(inputs, "bt_dpo_loss input");
  detail::validate_beta(beta);
  const double margin = beta * ((winner_lp - winner_ref_lp) - (loser_lp - loser_ref_lp));
  const double slope = sigmoid(-margin);
  return {softplus(-margin), {-beta * slope, beta * slope}};
}

/// Top response against each of the others, averaged.
inline LossResult mpo_loss(const ScoredChain& chain, double beta) {
  detail::validate(chain);
  detail::validate_beta(beta);
  const auto n = chain.size();
  require(n >= 2, "mpo_loss needs at least two responses");
  const auto& lp = chain.policy_logprobs;
  const auto& ref = chain.ref_logprobs;
  const double scale = 1.0 / static_cast<double>(n - 1);
  LossResult out;
  out.grad_policy_logprobs.assign(n, 0.0);
  for (std::size_t j = 1; j < n; ++j) {
    const auto pair = bt_dpo_loss(lp[0], lp[j], ref[0], ref[j], beta);
    out.value += scale * pair.value;
    out.grad_policy_logprobs[0] += scale * pair.grad_policy_logprobs[0];
    out.grad_policy_logprobs[j] += scale * pair.grad_policy_logprobs[1];
  }
  return out;
}

/// Margin-free pairwise hinge. The subgradient at a tie is zero.
inline LossResult hinge_loss(std::span<const double> scores) {
  const auto n = scores.size();
  require(n >= 2, "hinge_loss needs at least two scores");
  detail::require_finite(scores, "scores");
  const double norm = 2.0 / static_cast<double>(n * (n - 1));
  LossResult out;
  out.grad_policy_logprobs.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double gap = scores[j] - scores[i];
      if (gap > 0.0) {
        out.value += norm * gap;
        out.grad_policy_logprobs[j] += norm;
        out.grad_policy_logprobs[i] -= norm;
      }
    }
  }
  return out;
}

inline LossResult ranknet_loss(std::span<const double> scores) {
  const auto n = scores.size();
  require(n >= 2, "ranknet_loss needs at least two scores");
  detail::require_finite(scores, "scores");
  const double norm = 2.0 / static_cast<double>(n * (n - 1));
  LossResult out;
  out.grad_policy_logprobs.assign(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double diff = scores[i] - scores[j];
      const double slope = norm * sigmoid(-diff);
      out.value += norm * softplus(-diff);
      out.grad_policy_logprobs[i] -= slope;
      out.grad_policy_logprobs[j] += slope;
    }
  }
  return out;
}

/// Per-token mean negative log-likelihood of the ground-truth tokens.
inline LossResult ntp_loss(std::span<const double> token_logprobs) {
  require(!token_logprobs.empty(), "token_logprobs must be non-empty");
  detail::require_finite(token_logprobs, "token_logprobs");
  const double inv_len = 1.0 / static_cast<double>(token_logprobs.size());
  LossResult out;
  for (double lp : token_logprobs) out.value -= lp * inv_len;
  out.grad_policy_logprobs.assign(token_logprobs.size(), -inv_len);
  return out;
}

struct CombinedLossResult {
  double value = 0.0;
  double chain_value = 0.0;
  double ntp_value = 0.0;
  std::vector<double> grad_policy_logprobs;  // length n
  std::vector<double> grad_token_logprobs;   // length of the ground-truth sequence
};

/// The preference term alone. BT_DPO uses the top two responses of the chain
/// and leaves the rest with zero gradient; HINGE and RANKNET ignore the
/// reference log-probs.
inline LossResult objective_loss(const LossConfig& config, const ScoredChain& chain) {
  config.validate();
  detail::validate(chain);
  switch (config.objective) {
    case Objective::PlDpo:
      return pl_dpo_loss(chain, config.beta);
    case Objective::BtDpo: {
      require(chain.size() >= 2, "BT_DPO needs at least two responses");
      const auto& lp = chain.policy_logprobs;
      const auto& ref = chain.ref_logprobs;
      auto pair = bt_dpo_loss(lp[0], lp[1], ref[0], ref[1], config.beta);
      pair.grad_policy_logprobs.resize(chain.size(), 0.0);
      return pair;
    }
    case Objective::Mpo:
      return mpo_loss(chain, config.beta);
    case Objective::Hinge:
      return hinge_loss(chain.policy_logprobs);
    case Objective::RankNet:
      return ranknet_loss(chain.policy_logprobs);
  }
  fail(ErrorKind::InvalidInput, "unknown objective");
}

inline CombinedLossResult combined_loss(const LossConfig& config, const ScoredChain& chain,
                                        std::span<const double> gt_token_logprobs) {
  auto preference = objective_loss(config, chain);
  auto ntp = ntp_loss(gt_token_logprobs);
  CombinedLossResult out;
  out.chain_value = preference.value;
  out.ntp_value = ntp.value;
  out.value = preference.value + config.ntp_weight * ntp.value;
  out.grad_policy_logprobs = std::move(preference.grad_policy_logprobs);
  out.grad_token_logprobs = std::move(ntp.grad_policy_logprobs);
  for (auto& g : out.grad_token_logprobs) g *= config.ntp_weight;
  return out;
}

}  // namespace rcc::rankloss
