#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rcc/evalkit.hpp"

namespace ek = rcc::evalkit;
namespace mock = rcc::llm::mock;
using rcc::ErrorKind;

namespace {

std::vector<std::string> random_words(rcc::Rng& rng, std::size_t max_len) {
  static const std::vector<std::string> vocab = {"a", "dog", "cat", "runs", "the", "park", "red", "ball"};
  std::vector<std::string> out(rng.below(max_len + 1));
  for (auto& w : out) w = vocab[rng.below(vocab.size())];
  return out;
}

std::string joined(const std::vector<std::string>& words) {
  std::string s;
  for (const auto& w : words) s += w + " ";
  return s;
}

// Spearman as Pearson correlation of average ranks computed by counting.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double x : v) {
        less += x < v[i] ? 1 : 0;
        equal += x == v[i] ? 1 : 0;
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double c = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    c += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return c / std::sqrt(va * vb);
}

}  // namespace

TEST(JudgeParse, AcceptsLabelledAndBareForms) {
  EXPECT_EQ(ek::parse_judge_scores("7 7 7 7"), (ek::JudgeScore{7, 7, 7, 7}));
  EXPECT_EQ(ek::parse_judge_scores("Relevance: 9\nDescriptiveness: 4\nTemporal Consistency: 10\nFluency: 1"),
            (ek::JudgeScore{9, 4, 10, 1}));
}

TEST(JudgeParse, RejectsOutOfRangeOrWrongCount) {
  for (const char* bad : {"11 7 7 7", "0 5 5 5", "5 5 5", "5 5 5 5 5", "", "great caption"}) {
    try {
      ek::parse_judge_scores(bad);
      ADD_FAILURE() << bad;
    } catch (const rcc::Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Parse);
    }
  }
}

TEST(Judge, RetriesUnparseableOutput) {
  auto b = fixture::mock_backend({mock::Text{"11"}, mock::Text{"7 7 7 7"}});
  EXPECT_EQ(ek::judge_caption("A dog.", "A dog.", *b.client), (ek::JudgeScore{7, 7, 7, 7}));
  EXPECT_EQ(b.transport->calls(), 2u);
  auto never = fixture::mock_backend({mock::Text{"no scores"}});
  EXPECT_THROW(ek::judge_caption("A dog.", "A dog.", *never.client, 3), rcc::Error);
  EXPECT_EQ(never.transport->calls(), 3u);
}

TEST(Judge, IdenticalCaptionScoresTopRelevance) {
  auto b = fixture::mock_backend();
  const auto s = ek::judge_caption("A dog runs in the park.", "A dog runs in the park.", *b.client);
  EXPECT_EQ(s.relevance, 10);
  EXPECT_EQ(s.fluency, 10);
  const auto worse = ek::judge_caption("A cat sleeps in a box", "A dog runs in the park.", *b.client);
  EXPECT_LT(worse.relevance, 10);
  EXPECT_THROW(ek::judge_caption("", "x", *b.client), rcc::Error);
}

TEST(RougeL, WorkedValues) {
  EXPECT_DOUBLE_EQ(ek::rouge_l("a b c d", "a x y z").value, 0.25);
  // LCS 2, P = 2/3, R = 2/5.
  const auto cat = ek::rouge_l("the cat sat", "the cat on the mat");
  EXPECT_DOUBLE_EQ(cat.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(cat.recall, 0.4);
  EXPECT_NEAR(cat.value, 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(ek::rouge_l("The cat", "the CAT").value, 1.0);
  EXPECT_DOUBLE_EQ(ek::rouge_l("a b", "c d").value, 0.0);
  EXPECT_DOUBLE_EQ(ek::rouge_l("", "c d").value, 0.0);
  const auto s = ek::rouge_l("a b c", "a c");
  EXPECT_DOUBLE_EQ(s.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.recall, 1.0);
  EXPECT_DOUBLE_EQ(s.value, 0.8);
}

TEST(RougeL, LcsMatchesIndependentOracles) {
  rcc::Rng rng(123);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_words(rng, 9);
    const auto b = random_words(rng, 9);
    const auto fast = rcc::text::lcs_length<std::string>(a, b);
    EXPECT_EQ(fast, oracle::lcs_recursive(a, b));
    EXPECT_EQ(fast, oracle::lcs_table(a, b));
    if (a.empty() || b.empty() || fast == 0) continue;
    const double p = static_cast<double>(fast) / a.size(), r = static_cast<double>(fast) / b.size();
    EXPECT_NEAR(ek::rouge_l(joined(a), joined(b)).value, 2 * p * r / (p + r), 1e-12);
  }
}

TEST(Meteor, WorkedValues) {
  EXPECT_NEAR(ek::meteor_lite("the cat sat", "the cat sat").value, 1.0 - 0.5 / 27.0, 1e-12);
  EXPECT_NEAR(ek::meteor_lite("c b a", "a b c").value, 0.5, 1e-12);
  EXPECT_NEAR(ek::meteor_lite("dog", "dog").value, 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(ek::meteor_lite("x y", "a b").value, 0.0);
  // 2 matches in 1 chunk, P = 2/4, R = 2/2.
  const double f = 10.0 * 0.5 * 1.0 / (1.0 + 9.0 * 0.5);
  EXPECT_NEAR(ek::meteor_lite("a b q r", "a b").value, f * (1.0 - 0.5 / 8.0), 1e-12);
}

TEST(Meteor, BoundedAndRecallWeighted) {
  rcc::Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto v = ek::meteor_lite(joined(random_words(rng, 8)), joined(random_words(rng, 8))).value;
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_GT(ek::meteor_lite("a b c d", "a b").value, ek::meteor_lite("a b", "a b c d").value);
}

TEST(Spearman, WorkedValues) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> rev = {5, 4, 3, 2, 1};
  EXPECT_NEAR(ek::spearman(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ek::spearman(a, rev), -1.0, 1e-12);
  const std::vector<double> x = {1, 2, 3, 4};
  const std::vector<double> y = {2, 1, 4, 3};
  EXPECT_NEAR(ek::spearman(x, y), 0.6, 1e-12);
  EXPECT_NEAR(ek::spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-12);
  EXPECT_EQ(ek::average_ranks(std::vector<double>{3, 1, 3}), (std::vector<double>{2.5, 1, 2.5}));
}

TEST(Spearman, MatchesOracleWithTies) {
  rcc::Rng rng(77);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 3 + rng.below(10);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = static_cast<double>(rng.below(5));
    for (auto& v : b) v = static_cast<double>(rng.below(5));
    const bool flat = std::all_of(a.begin(), a.end(), [&](double v) { return v == a[0]; }) ||
                      std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; });
    if (flat) continue;
    EXPECT_NEAR(ek::spearman(a, b), spearman_oracle(a, b), 1e-12);
  }
}

TEST(Spearman, UndefinedAndInvalidInputs) {
  const std::vector<double> flat = {3, 3, 3};
  const std::vector<double> a = {1, 2, 3};
  try {
    ek::spearman(flat, a);
    FAIL();
  } catch (const rcc::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UndefinedCorrelation);
  }
  const std::vector<double> one = {1};
  EXPECT_THROW(ek::spearman(one, one), rcc::Error);
  EXPECT_THROW(ek::spearman(a, std::vector<double>{1, 2}), rcc::Error);
}

TEST(RankingAccuracy, PerfectReversedAndTied) {
  const std::vector<std::vector<double>> perfect = {{3, 2, 1}, {0, -1}};
  auto r = ek::ranking_accuracy_from_scores(perfect);
  EXPECT_DOUBLE_EQ(r.exact_order_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.pairwise_rate, 1.0);
  EXPECT_EQ(r.pairs, 4u);
  EXPECT_FALSE(r.degenerate());

  const std::vector<std::vector<double>> reversed = {{1, 2, 3}};
  r = ek::ranking_accuracy_from_scores(reversed);
  EXPECT_DOUBLE_EQ(r.exact_order_rate, 0.0);
  EXPECT_DOUBLE_EQ(r.pairwise_rate, 0.0);

  const std::vector<std::vector<double>> tied = {{1, 1, 1}, {2, 2}};
  r = ek::ranking_accuracy_from_scores(tied);
  EXPECT_TRUE(r.degenerate());
  EXPECT_EQ(r.tied_pairs, 4u);
  EXPECT_DOUBLE_EQ(r.pairwise_rate, 1.0);
}

TEST(RankingAccuracy, RandomScoresNearChance) {
  rcc::Rng rng(2024);
  std::vector<std::vector<double>> chains(4000, std::vector<double>(2));
  for (auto& c : chains)
    for (auto& v : c) v = rng.normal();
  const auto r = ek::ranking_accuracy_from_scores(chains);
  EXPECT_NEAR(r.pairwise_rate, 0.5, 0.03);
  EXPECT_THROW(ek::ranking_accuracy_from_scores(std::vector<std::vector<double>>{}), rcc::Error);
  EXPECT_THROW(ek::ranking_accuracy_from_scores(std::vector<std::vector<double>>{{1.0}}), rcc::Error);
}

TEST(RankingAccuracy, PolicyScoresUseSequenceLogprob) {
  rcc::Rng rng(3);
  const auto policy = rcc::toy::ToyPolicy::random(6, 2, 1.0, rng);
  const rcc::toy::TrainingChain chain{{0.5, -0.5}, {{1, 2}, {3, 4}, {5, 1}}};
  const auto scores = ek::chain_scores(policy, chain);
  ASSERT_EQ(scores.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(scores[i], rcc::toy::score_sequence(policy, chain.context, chain.sequences[i]).sequence_logprob);
  }
}

TEST(Mcqa, PicksHighestAndFirstOnTies) {
  EXPECT_EQ(ek::mcqa_answer(std::vector<double>{-1.0, -0.5, -2.0}), 1u);
  EXPECT_EQ(ek::mcqa_answer(std::vector<double>{-1.0, -1.0, -1.0}), 0u);
  rcc::Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> lp(4);
    for (auto& v : lp) v = rng.normal();
    auto shifted = lp;
    const double c = rng.normal() * 10;
    for (auto& v : shifted) v += c;
    EXPECT_EQ(ek::mcqa_answer(lp), ek::mcqa_answer(shifted));
  }
  EXPECT_THROW(ek::mcqa_answer(std::vector<double>{1.0}), rcc::Error);
}

TEST(Mcqa, PolicyAnswerMatchesContinuationScores) {
  rcc::Rng rng(4);
  const auto policy = rcc::toy::ToyPolicy::random(8, 2, 1.0, rng);
  const std::vector<double> ctx = {1.0, -1.0};
  const std::vector<rcc::toy::TokenSeq> letters = {{1}, {2}, {3}};
  const rcc::toy::TokenSeq prompt = {4, 5};
  std::vector<double> lp;
  for (const auto& l : letters) lp.push_back(rcc::toy::score_continuation(policy, ctx, prompt, l).sequence_logprob);
  EXPECT_EQ(ek::mcqa_answer(policy, ctx, letters, prompt), ek::mcqa_answer(lp));
}

TEST(RlaifV, HarmonicMean) {
  EXPECT_DOUBLE_EQ(ek::rlaifv_f1(1.0, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(ek::rlaifv_f1(0.5, 1.0), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(ek::rlaifv_f1(0.0, 0.0), 0.0);
  EXPECT_THROW(ek::rlaifv_f1(1.5, 0.5), rcc::Error);
}

TEST(Verdicts, Parse) {
  EXPECT_EQ(ek::parse_verdict("1"), ek::Verdict::First);
  EXPECT_EQ(ek::parse_verdict(" 2."), ek::Verdict::Second);
  EXPECT_EQ(ek::parse_verdict("TIE"), ek::Verdict::Tie);
  EXPECT_THROW(ek::parse_verdict("maybe"), rcc::Error);
}

TEST(ComparisonPairs, CandidatePairsCoverAllUnorderedPairs) {
  const auto pairs = ek::candidate_pairs(5);
  EXPECT_EQ(pairs.size(), 10u);
  for (const auto& [i, j] : pairs) EXPECT_LT(i, j);
  EXPECT_TRUE(ek::candidate_pairs(1).empty());
}

TEST(ComparisonPairs, QuotaDropsTiesAndSkipsShortVideos) {
  std::vector<ek::PairwiseVerdict> verdicts;
  auto add = [&](const std::string& video, std::size_t ties) {
    const auto pairs = ek::candidate_pairs(5);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto v = k < ties ? ek::Verdict::Tie : (k % 2 == 0 ? ek::Verdict::First : ek::Verdict::Second);
      verdicts.push_back({video, pairs[k].first, pairs[k].second, v});
    }
  };
  add("keep", 1);
  add("skip", 2);
  add("clean", 0);
  rcc::Rng rng(1);
  const auto out = ek::build_comparison_pairs(verdicts, 9, rng);
  EXPECT_EQ(out.kept_videos, (std::vector<std::string>{"keep", "clean"}));
  EXPECT_EQ(out.skipped_videos, (std::vector<std::string>{"skip"}));
  ASSERT_EQ(out.pairs.size(), 18u);
  for (const auto& p : out.pairs) {
    EXPECT_NE(p.winner, p.loser);
    EXPECT_NE(p.video_id, "skip");
  }
  const auto first_tie = verdicts.front();
  for (const auto& p : out.pairs) {
    if (p.video_id != "keep") continue;
    const bool is_tie_pair = (p.winner == first_tie.first && p.loser == first_tie.second) ||
                             (p.winner == first_tie.second && p.loser == first_tie.first);
    EXPECT_FALSE(is_tie_pair);
  }
  rcc::Rng again(1);
  EXPECT_EQ(ek::build_comparison_pairs(verdicts, 9, again).pairs, out.pairs);
}

TEST(ComparisonPairs, WinnerFollowsVerdict) {
  const std::vector<ek::PairwiseVerdict> verdicts = {{"v", 0, 3, ek::Verdict::Second}};
  rcc::Rng rng(1);
  const auto out = ek::build_comparison_pairs(verdicts, 1, rng);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0], (ek::PreferencePair{"v", 3, 0}));
}

TEST(HeadToHead, RatesSumToOne) {
  const std::vector<ek::Side> prefs = {ek::Side::A, ek::Side::A, ek::Side::B, ek::Side::A};
  const auto w = ek::head_to_head(prefs);
  EXPECT_DOUBLE_EQ(w.a, 0.75);
  EXPECT_DOUBLE_EQ(w.b, 0.25);
  EXPECT_THROW(ek::head_to_head(std::vector<ek::Side>{}), rcc::Error);
}
