#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rcc/random.hpp"
#include "rcc/rankloss.hpp"

namespace {

using namespace rcc::rankloss;

ScoredChain equal_chain(std::size_t n, rcc::Rng& rng) {
  ScoredChain c;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = -10.0 * rng.uniform();
    c.policy_logprobs.push_back(v);
    c.ref_logprobs.push_back(v);
  }
  return c;
}

ScoredChain ratio_chain(const std::vector<double>& ratios) {
  ScoredChain c;
  for (double d : ratios) {
    c.policy_logprobs.push_back(d - 2.0);
    c.ref_logprobs.push_back(-2.0);
  }
  return c;
}

std::vector<double> random_values(std::size_t n, rcc::Rng& rng, double lo = -5.0, double hi = 5.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

TEST(PlProbability, WorkedValues) {
  const std::vector<double> tie = {0.0, 0.0};
  EXPECT_NEAR(pl_probability(tie), 0.5, 1e-15);
  const std::vector<double> single = {3.7};
  EXPECT_NEAR(pl_probability(single), 1.0, 1e-15);
  const std::vector<double> three = {std::log(2.0), 0.0, 0.0};
  EXPECT_NEAR(pl_probability(three), 0.25, 1e-15);
}

TEST(PlProbability, MatchesDirectProduct) {
  rcc::Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto r = random_values(1 + rng.below(6), rng, -3.0, 3.0);
    EXPECT_NEAR(pl_probability(r), oracle::pl_probability_direct(r), 1e-12);
  }
}

TEST(PlProbability, SumsToOneOverPermutations) {
  rcc::Rng rng(5);
  for (std::size_t n = 1; n <= 5; ++n) {
    auto r = random_values(n, rng);
    std::sort(r.begin(), r.end());
    double total = 0.0;
    do {
      total += pl_probability(r);
    } while (std::next_permutation(r.begin(), r.end()));
    EXPECT_NEAR(total, 1.0, 1e-9) << "n=" << n;
  }
}

TEST(PlProbability, FiniteForLargeRewards) {
  const std::vector<double> big = {700.0, -700.0, 0.0};
  EXPECT_TRUE(std::isfinite(pl_probability(big)));
  EXPECT_TRUE(std::isfinite(pl_negative_log_likelihood(big).value));
}

TEST(PlDpoLoss, PolicyEqualsReferenceIsLogFactorial) {
  rcc::Rng rng(1);
  for (std::size_t n = 1; n <= 10; ++n) {
    const auto chain = equal_chain(n, rng);
    EXPECT_NEAR(pl_dpo_loss(chain, 0.3).value, oracle::log_factorial(static_cast<int>(n)), 1e-9) << "n=" << n;
  }
  EXPECT_NEAR(pl_dpo_loss(equal_chain(3, rng), 0.7).value, 1.791759469228055, 1e-12);
}

TEST(PlDpoLoss, SingleResponse) {
  const auto r = pl_dpo_loss(ratio_chain({0.4}), 0.3);
  EXPECT_EQ(r.value, 0.0);
  ASSERT_EQ(r.grad_policy_logprobs.size(), 1u);
  EXPECT_EQ(r.grad_policy_logprobs[0], 0.0);
}

TEST(PlDpoLoss, TwoResponsesWorkedValue) {
  EXPECT_NEAR(pl_dpo_loss(ratio_chain({1.0, 0.0}), 1.0).value, std::log1p(std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(pl_dpo_loss(ratio_chain({1.0, 0.0}), 1.0).value, 0.313261687518223, 1e-12);
}

TEST(PlDpoLoss, TwoResponsesEqualsBradleyTerry) {
  rcc::Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto v = random_values(4, rng);
    const double beta = 0.05 + 2.0 * rng.uniform();
    ScoredChain c{{v[0], v[1]}, {v[2], v[3]}};
    const auto pl = pl_dpo_loss(c, beta);
    const auto bt = bt_dpo_loss(v[0], v[1], v[2], v[3], beta);
    EXPECT_NEAR(pl.value, bt.value, 1e-12);
    EXPECT_NEAR(pl.grad_policy_logprobs[0], bt.grad_policy_logprobs[0], 1e-12);
    EXPECT_NEAR(pl.grad_policy_logprobs[1], bt.grad_policy_logprobs[1], 1e-12);
  }
}

TEST(BtDpoLoss, WorkedValues) {
  EXPECT_NEAR(bt_dpo_loss(-3.0, -4.0, -3.0, -4.0, 0.3).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(bt_dpo_loss(1.0, 0.0, 0.0, 0.0, 1.0).value, 0.313261687518223, 1e-12);
  EXPECT_LT(bt_dpo_loss(600.0, 0.0, 0.0, 0.0, 1.0).value, 1e-200);
}

TEST(MpoLoss, WorkedValues) {
  rcc::Rng rng(2);
  for (std::size_t n = 2; n <= 7; ++n) EXPECT_NEAR(mpo_loss(equal_chain(n, rng), 0.3).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(mpo_loss(ratio_chain({1.0, 0.0, 0.0}), 1.0).value, 0.313261687518223, 1e-12);
  const auto pair = ratio_chain({0.7, -0.2});
  EXPECT_NEAR(mpo_loss(pair, 0.4).value, bt_dpo_loss(pair.policy_logprobs[0], pair.policy_logprobs[1],
                                                     pair.ref_logprobs[0], pair.ref_logprobs[1], 0.4).value, 1e-15);
}

TEST(HingeLoss, WorkedValues) {
  EXPECT_EQ(hinge_loss(std::vector<double>{3, 2, 1}).value, 0.0);
  EXPECT_NEAR(hinge_loss(std::vector<double>{1, 2}).value, 1.0, 1e-15);
  EXPECT_NEAR(hinge_loss(std::vector<double>{2, 3, 1}).value, 1.0 / 3.0, 1e-15);
}

TEST(HingeLoss, ZeroExactlyWhenNonIncreasing) {
  rcc::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto s = random_values(2 + rng.below(5), rng);
    for (auto& x : s) x = std::round(x);  // force ties now and then
    const bool sorted = std::is_sorted(s.begin(), s.end(), std::greater<>());
    EXPECT_EQ(hinge_loss(s).value == 0.0, sorted);
  }
}

TEST(RankNetLoss, WorkedValues) {
  EXPECT_NEAR(ranknet_loss(std::vector<double>{1.5, 1.5}).value, std::log(2.0), 1e-12);
  EXPECT_NEAR(ranknet_loss(std::vector<double>{2, 0}).value, 0.126928011042973, 1e-12);
  EXPECT_LT(ranknet_loss(std::vector<double>{900, 0, -900}).value, 1e-200);
}

TEST(NtpLoss, WorkedValues) {
  const std::vector<double> uniform(7, -std::log(4.0));
  EXPECT_NEAR(ntp_loss(uniform).value, 1.386294361119891, 1e-12);
  EXPECT_EQ(ntp_loss(std::vector<double>{0.0, 0.0}).value, 0.0);
  EXPECT_NEAR(ntp_loss(std::vector<double>{-1.0, -3.0}).value, 2.0, 1e-15);
}

TEST(CombinedLoss, WorkedValues) {
  rcc::Rng rng(4);
  const auto chain = equal_chain(3, rng);
  const std::vector<double> tokens(5, -std::log(4.0));
  LossConfig cfg{Objective::PlDpo, 0.3, 0.1};
  EXPECT_NEAR(combined_loss(cfg, chain, tokens).value, 1.930388905340044, 1e-12);

  cfg.ntp_weight = 0.0;
  const auto bare = objective_loss(cfg, chain);
  EXPECT_NEAR(combined_loss(cfg, chain, tokens).value, bare.value, 1e-15);

  LossConfig hinge{Objective::Hinge, 0.3, 0.1};
  EXPECT_EQ(combined_loss(hinge, ratio_chain({3, 2, 1}), std::vector<double>{0.0}).value, 0.0);
}

TEST(CombinedLoss, BradleyTerryUsesTopTwoOnly) {
  LossConfig cfg{Objective::BtDpo, 0.3, 0.0};
  const auto r = objective_loss(cfg, ratio_chain({0.5, 0.1, 2.0, -1.0}));
  ASSERT_EQ(r.grad_policy_logprobs.size(), 4u);
  EXPECT_NE(r.grad_policy_logprobs[0], 0.0);
  EXPECT_NE(r.grad_policy_logprobs[1], 0.0);
  EXPECT_EQ(r.grad_policy_logprobs[2], 0.0);
  EXPECT_EQ(r.grad_policy_logprobs[3], 0.0);
}

TEST(Objectives, ParseNames) {
  EXPECT_EQ(parse_objective("PL_DPO"), Objective::PlDpo);
  EXPECT_EQ(parse_objective("RANK"), Objective::PlDpo);
  EXPECT_EQ(parse_objective("BT_DPO"), Objective::BtDpo);
  EXPECT_EQ(parse_objective("MPO"), Objective::Mpo);
  EXPECT_EQ(parse_objective("HINGE"), Objective::Hinge);
  EXPECT_EQ(parse_objective("RANKNET"), Objective::RankNet);
  EXPECT_FALSE(parse_objective("PPO").has_value());
}

TEST(Objectives, RejectBadInputs) {
  EXPECT_THROW(pl_dpo_loss(ScoredChain{{}, {}}, 0.3), rcc::Error);
  EXPECT_THROW(pl_dpo_loss(ScoredChain{{1.0, 2.0}, {1.0}}, 0.3), rcc::Error);
  EXPECT_THROW(pl_dpo_loss(ratio_chain({1.0, 0.0}), 0.0), rcc::Error);
  EXPECT_THROW(pl_dpo_loss(ScoredChain{{NAN, 0.0}, {0.0, 0.0}}, 0.3), rcc::Error);
  EXPECT_THROW(hinge_loss(std::vector<double>{1.0}), rcc::Error);
  EXPECT_THROW(ntp_loss(std::vector<double>{}), rcc::Error);
  try {
    mpo_loss(ratio_chain({1.0}), 0.3);
    FAIL() << "expected an error";
  } catch (const rcc::Error& e) {
    EXPECT_EQ(e.kind(), rcc::ErrorKind::InvalidInput);
  }
}

// Every objective as a function of the flattened policy log-probs.
LossResult evaluate(Objective o, const std::vector<double>& policy, const std::vector<double>& ref, double beta) {
  ScoredChain c{policy, ref};
  return objective_loss(LossConfig{o, beta, 0.0}, c);
}

TEST(Gradients, MatchCentralDifferences) {
  rcc::Rng rng(2024);
  for (auto o : {Objective::PlDpo, Objective::BtDpo, Objective::Mpo, Objective::Hinge, Objective::RankNet}) {
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 2 + rng.below(5);
      const auto policy = random_values(n, rng);
      const auto ref = random_values(n, rng);
      const double beta = 0.1 + rng.uniform();
      if (o == Objective::Hinge) {
        bool near_kink = false;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) near_kink |= std::abs(policy[i] - policy[j]) < 1e-6;
        }
        if (near_kink) continue;
      }
      const auto analytic = evaluate(o, policy, ref, beta).grad_policy_logprobs;
      const auto numeric = oracle::central_difference(
          [&](const std::vector<double>& x) { return evaluate(o, x, ref, beta).value; }, policy);
      for (std::size_t i = 0; i < n; ++i) {
        EXPECT_LT(oracle::relative_error(analytic[i], numeric[i]), 1e-5) << to_string(o) << " i=" << i;
      }
      ++checked;
    }
    EXPECT_GT(checked, 250) << to_string(o);
  }
}

TEST(Gradients, NtpMatchesCentralDifferences) {
  rcc::Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const auto lps = random_values(1 + rng.below(8), rng, -6.0, 0.0);
    const auto analytic = ntp_loss(lps).grad_policy_logprobs;
    const auto numeric = oracle::central_difference([](const std::vector<double>& x) { return ntp_loss(x).value; }, lps);
    for (std::size_t i = 0; i < lps.size(); ++i) EXPECT_LT(oracle::relative_error(analytic[i], numeric[i]), 1e-5);
  }
}

TEST(Properties, ShiftInvariance) {
  rcc::Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    auto policy = random_values(n, rng);
    auto ref = random_values(n, rng);
    const double beta = 0.1 + rng.uniform();
    const double c = -3.0 + 6.0 * rng.uniform();
    auto shifted_policy = policy;
    auto shifted_ref = ref;
    for (auto& x : shifted_policy) x += c;
    for (auto& x : shifted_ref) x += c;
    for (auto o : {Objective::PlDpo, Objective::BtDpo, Objective::Mpo}) {
      EXPECT_NEAR(evaluate(o, policy, ref, beta).value, evaluate(o, shifted_policy, shifted_ref, beta).value, 1e-10);
    }
    for (auto o : {Objective::Hinge, Objective::RankNet}) {
      EXPECT_NEAR(evaluate(o, policy, ref, beta).value, evaluate(o, shifted_policy, ref, beta).value, 1e-10);
    }
  }
}

TEST(Properties, NonNegative) {
  rcc::Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    const auto policy = random_values(n, rng, -50.0, 50.0);
    const auto ref = random_values(n, rng, -50.0, 50.0);
    for (auto o : {Objective::PlDpo, Objective::BtDpo, Objective::Mpo, Objective::Hinge, Objective::RankNet}) {
      const auto r = evaluate(o, policy, ref, 0.5);
      EXPECT_GE(r.value, 0.0);
      EXPECT_TRUE(std::isfinite(r.value));
    }
  }
}

}  // namespace
