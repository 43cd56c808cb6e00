#pragma once

// Evaluation: LLM-as-judge caption scores, n-gram metrics, rank agreement,
// ordering accuracy, letter-log-prob multiple choice, and the scoring math
// used by the on-policy baselines.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/error.hpp"
#include "rcc/llmgateway.hpp"
#include "rcc/random.hpp"
#include "rcc/text.hpp"
#include "rcc/toypolicy.hpp"

namespace rcc::evalkit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Judge scores

struct JudgeScore {
  int relevance = 1;
  int descriptiveness = 1;
  int temporal_consistency = 1;
  int fluency = 1;

  [[nodiscard]] std::array<int, 4> values() const { return {relevance, descriptiveness, temporal_consistency, fluency}; }
  friend bool operator==(const JudgeScore&, const JudgeScore&) = default;
};

inline constexpr std::array<const char*, 4> kJudgeMetrics = {"relevance", "descriptiveness", "temporal_consistency", "fluency"};

/// Accepts labelled lines or bare numbers; needs exactly four integers in 1..10.
inline JudgeScore parse_judge_scores(std::string_view output) {
  std::vector<long> numbers;
  for (std::size_t i = 0; i < output.size();) {
    if (std::isdigit(static_cast<unsigned char>(output[i]))) {
      long value = 0;
      while (i < output.size() && std::isdigit(static_cast<unsigned char>(output[i]))) {
        value = std::min(value * 10 + (output[i] - '0'), 1000000L);
        ++i;
      }
      numbers.push_back(value);
    } else {
      ++i;
    }
  }
  if (numbers.size() != 4) fail(ErrorKind::Parse, "judge output needs four scores, found " + std::to_string(numbers.size()));
  for (long n : numbers) {
    if (n < 1 || n > 10) fail(ErrorKind::Parse, "judge score " + std::to_string(n) + " outside 1..10");
  }
  return {static_cast<int>(numbers[0]), static_cast<int>(numbers[1]), static_cast<int>(numbers[2]), static_cast<int>(numbers[3])};
}

/// Reference-based judging. Unparseable answers are re-requested up to
/// `max_attempts` times in total.
inline JudgeScore judge_caption(std::string_view predicted, std::string_view reference, llm::Client& client,
                                int max_attempts = 3) {
  require(!text::trim(predicted).empty(), "predicted caption is empty");
  require(!text::trim(reference).empty(), "reference caption is empty");
  llm::CompletionRequest request;
  request.template_id = "judge_caption";
  request.temperature = llm::kJudgeTemperature;
  request.max_tokens = 64;
  request.vars = {{"predicted", std::string(predicted)}, {"reference", std::string(reference)}};
  std::string last_error;
  for (int attempt = 0; attempt < std::max(1, max_attempts); ++attempt) {
    try {
      return parse_judge_scores(client.complete(request));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Parse) throw;
      last_error = e.what();
    }
  }
  fail(ErrorKind::Parse, "judge output unparseable after " + std::to_string(max_attempts) + " attempts: " + last_error);
}

inline json to_json(const JudgeScore& s) {
  return {{"relevance", s.relevance}, {"descriptiveness", s.descriptiveness},
          {"temporal_consistency", s.temporal_consistency}, {"fluency", s.fluency}};
}

// ---------------------------------------------------------------------------
// N-gram metrics

enum class NgramMetric { RougeL, MeteorLite };

struct NgramScore {
  NgramMetric metric = NgramMetric::RougeL;
  double precision = 0.0;
  double recall = 0.0;
  double value = 0.0;
};

/// LCS-based F1 over lowercased whitespace tokens.
inline NgramScore rouge_l(std::string_view predicted, std::string_view reference) {
  const auto pred = text::metric_tokens(predicted);
  const auto ref = text::metric_tokens(reference);
  NgramScore out{NgramMetric::RougeL};
  if (pred.empty() || ref.empty()) return out;
  const auto lcs = static_cast<double>(text::lcs_length<std::string>(pred, ref));
  if (lcs == 0.0) return out;
  out.precision = lcs / static_cast<double>(pred.size());
  out.recall = lcs / static_cast<double>(ref.size());
  out.value = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

/// Exact-match METEOR: greedy left-to-right alignment, recall-weighted
/// harmonic mean, fragmentation penalty 0.5 * (chunks / matches)^3.
inline NgramScore meteor_lite(std::string_view predicted, std::string_view reference) {
  const auto pred = text::metric_tokens(predicted);
  const auto ref = text::metric_tokens(reference);
  NgramScore out{NgramMetric::MeteorLite};
  if (pred.empty() || ref.empty()) return out;
  std::vector<bool> used(ref.size(), false);
  std::vector<std::ptrdiff_t> aligned(pred.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (!used[j] && pred[i] == ref[j]) {
        used[j] = true;
        aligned[i] = static_cast<std::ptrdiff_t>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return out;
  std::size_t chunks = 0;
  std::ptrdiff_t prev = -2;
  bool in_chunk = false;
  for (auto a : aligned) {
    if (a < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || a != prev + 1) ++chunks;
    in_chunk = true;
    prev = a;
  }
  const double m = static_cast<double>(matches);
  out.precision = m / static_cast<double>(pred.size());
  out.recall = m / static_cast<double>(ref.size());
  const double f_mean = 10.0 * out.precision * out.recall / (out.recall + 9.0 * out.precision);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
  out.value = f_mean * (1.0 - penalty);
  return out;
}

// ---------------------------------------------------------------------------
// Rank correlation

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "spearman inputs differ in length");
  require(a.size() >= 2, "spearman needs at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) fail(ErrorKind::UndefinedCorrelation, "a rank vector has zero variance");
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Ordering accuracy

struct RankingAccuracy {
  double exact_order_rate = 0.0;
  double pairwise_rate = 0.0;
  std::size_t chains = 0;
  std::size_t pairs = 0;
  std::size_t tied_pairs = 0;  // pairs decided only by the stable tie-break
  /// Every pair was a tie, so the rates measure the tie-break, not the model.
  [[nodiscard]] bool degenerate() const { return pairs > 0 && tied_pairs == pairs; }
};

/// Each inner vector holds one chain's scores in ground-truth order. A pair
/// counts as correct when the stable descending sort keeps it in order.
inline RankingAccuracy ranking_accuracy_from_scores(std::span<const std::vector<double>> chains) {
  require(!chains.empty(), "empty evaluation dataset");
  RankingAccuracy out;
  std::size_t exact = 0;
  std::size_t consistent = 0;
  for (const auto& scores : chains) {
    require(scores.size() >= 2, "each chain needs at least two members");
    bool all = true;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      for (std::size_t j = i + 1; j < scores.size(); ++j) {
        ++out.pairs;
        if (scores[i] == scores[j]) ++out.tied_pairs;
        if (scores[i] >= scores[j]) {
          ++consistent;
        } else {
          all = false;
        }
      }
    }
    exact += all ? 1 : 0;
  }
  out.chains = chains.size();
  out.exact_order_rate = static_cast<double>(exact) / static_cast<double>(chains.size());
  out.pairwise_rate = static_cast<double>(consistent) / static_cast<double>(out.pairs);
  return out;
}

inline std::vector<double> chain_scores(const toy::ToyPolicy& policy, const toy::TrainingChain& chain) {
  std::vector<double> scores;
  scores.reserve(chain.sequences.size());
  for (const auto& seq : chain.sequences) scores.push_back(toy::score_sequence(policy, chain.context, seq).sequence_logprob);
  return scores;
}

inline RankingAccuracy ranking_accuracy(const toy::ToyPolicy& policy, std::span<const toy::TrainingChain> chains) {
  require(!chains.empty(), "empty evaluation dataset");
  std::vector<std::vector<double>> all;
  all.reserve(chains.size());
  for (const auto& c : chains) all.push_back(chain_scores(policy, c));
  return ranking_accuracy_from_scores(all);
}

// ---------------------------------------------------------------------------
// Multiple-choice answering

/// Index of the highest log-prob; the first wins ties.
inline std::size_t mcqa_answer(std::span<const double> letter_logprobs) {
  require(letter_logprobs.size() >= 2, "need at least two choices");
  std::size_t best = 0;
  for (std::size_t i = 1; i < letter_logprobs.size(); ++i) {
    if (letter_logprobs[i] > letter_logprobs[best]) best = i;
  }
  return best;
}

/// Scores each letter's token string as a continuation of `prompt`.
inline std::size_t mcqa_answer(const toy::ToyPolicy& policy, std::span<const double> context,
                               std::span<const toy::TokenSeq> letters, std::span<const toy::Token> prompt) {
  require(letters.size() >= 2, "need at least two choices");
  std::vector<double> lps;
  for (const auto& l : letters) lps.push_back(toy::score_continuation(policy, context, prompt, l).sequence_logprob);
  return mcqa_answer(lps);
}

// ---------------------------------------------------------------------------
// On-policy baseline scoring

/// Harmonic mean of claim precision and claim recall.
inline double rlaifv_f1(double precision, double recall) {
  require(precision >= 0.0 && precision <= 1.0, "precision must lie in [0, 1]");
  require(recall >= 0.0 && recall <= 1.0, "recall must lie in [0, 1]");
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

enum class Verdict { First, Second, Tie };

inline Verdict parse_verdict(std::string_view output) {
  const auto t = text::to_lower(text::trim(output));
  if (t.starts_with("tie")) return Verdict::Tie;
  if (t.starts_with("1")) return Verdict::First;
  if (t.starts_with("2")) return Verdict::Second;
  fail(ErrorKind::Parse, "expected 1, 2 or TIE, got '" + std::string(output) + "'");
}

struct PairwiseVerdict {
  std::string video_id;
  std::size_t first = 0;
  std::size_t second = 1;
  Verdict verdict = Verdict::Tie;
};

struct PreferencePair {
  std::string video_id;
  std::size_t winner = 0;
  std::size_t loser = 0;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Every unordered pair of `responses` indices, (0,1), (0,2), ...
inline std::vector<std::pair<std::size_t, std::size_t>> candidate_pairs(std::size_t responses) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < responses; ++i) {
    for (std::size_t j = i + 1; j < responses; ++j) out.emplace_back(i, j);
  }
  return out;
}

struct ComparisonPairs {
  std::vector<PreferencePair> pairs;
  std::vector<std::string> kept_videos;
  std::vector<std::string> skipped_videos;  // fewer non-tie verdicts than the quota
};

/// Drops ties, skips videos with fewer than `quota` decisive verdicts, and
/// samples exactly `quota` pairs from each remaining video. Videos are
/// processed in order of first appearance.
inline ComparisonPairs build_comparison_pairs(std::span<const PairwiseVerdict> verdicts, std::size_t quota, Rng& rng) {
  require(quota >= 1, "quota must be at least 1");
  std::vector<std::string> order;
  std::map<std::string, std::vector<PreferencePair>> decisive;
  for (const auto& v : verdicts) {
    require(v.first != v.second, "verdict compares a response with itself");
    if (!decisive.contains(v.video_id)) order.push_back(v.video_id);
    auto& bucket = decisive[v.video_id];
    if (v.verdict == Verdict::First) bucket.push_back({v.video_id, v.first, v.second});
    if (v.verdict == Verdict::Second) bucket.push_back({v.video_id, v.second, v.first});
  }
  ComparisonPairs out;
  for (const auto& video : order) {
    auto& bucket = decisive[video];
    if (bucket.size() < quota) {
      out.skipped_videos.push_back(video);
      continue;
    }
    rng.shuffle(std::span(bucket));
    out.pairs.insert(out.pairs.end(), bucket.begin(), bucket.begin() + static_cast<std::ptrdiff_t>(quota));
    out.kept_videos.push_back(video);
  }
  return out;
}

enum class Side { A, B };

struct WinRates {
  double a = 0.0;
  double b = 0.0;
};

inline WinRates head_to_head(std::span<const Side> preferences) {
  require(!preferences.empty(), "no preferences");
  const auto a = static_cast<double>(std::count(preferences.begin(), preferences.end(), Side::A));
  const double n = static_cast<double>(preferences.size());
  return {a / n, (n - a) / n};
}

}  // namespace rcc::evalkit
