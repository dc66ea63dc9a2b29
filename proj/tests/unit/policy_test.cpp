#include <cmath>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "exgrpo/error.hpp"
#include "exgrpo/oracle.hpp"
#include "exgrpo/policy.hpp"
#include "test_util.hpp"

namespace exgrpo {
namespace {

using testing::flat_params;
using testing::question;
using testing::set_row;

TEST(TokenDistribution, EqualLogitsAreUniform) {
  const PolicyParams p = flat_params(4, 3);
  const auto dist = token_distribution(p, question(0, 0, {1}), {});
  for (double x : dist) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(TokenDistribution, DominantLogit) {
  PolicyParams p = flat_params(2, 1);
  p.logits.row(p.logits.context(0, 0, nullptr))[1] = 50.0;
  const auto dist = token_distribution(p, question(0, 0, {1}), {});
  EXPECT_GE(dist[1], 1.0 - 1e-20);
  EXPECT_GT(dist[0], 0.0);
}

TEST(TokenDistribution, LogOdds) {
  PolicyParams p = flat_params(2, 1);
  p.logits.row(p.logits.context(0, 0, nullptr))[0] = std::log(1.0);
  p.logits.row(p.logits.context(0, 0, nullptr))[1] = std::log(3.0);
  const auto dist = token_distribution(p, question(0, 0, {1}), {});
  EXPECT_NEAR(dist[0], 0.25, 1e-15);
  EXPECT_NEAR(dist[1], 0.75, 1e-15);
}

TEST(TokenDistribution, Errors) {
  const PolicyParams p = flat_params(3, 2);
  EXPECT_THROW(
      {
        try {
          token_distribution(p, question(5, 3, {1}), {});
        } catch (const Error& e) {
          EXPECT_STREQ(e.what(), "unknown question");
          throw;
        }
      },
      Error);
  const TokenSeq full = {1, 2};
  try {
    token_distribution(p, question(0, 0, {1}), full);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "sequence complete");
  }
}

TEST(TokenDistribution, SumsToOneOnRandomLogits) {
  Rng rng(3);
  PolicyParams p = flat_params(4, 3, 2);
  oracle::randomize_logits(p, 5.0, rng);
  const Question q = question(1, 1, {2});
  for (Token a = 0; a < 4; ++a) {
    const TokenSeq prefix = {a};
    const auto dist = token_distribution(p, q, prefix);
    EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-12);
    for (double x : dist) EXPECT_GT(x, 0.0);
  }
}

TEST(SampleTrajectory, DeterministicPolicyFollowsGreedyPath) {
  PolicyParams p = flat_params(3, 3);
  const Question q = question(0, 0, {2, 1});
  const Token two = 2;
  const Token one = 1;
  p.logits.row(p.logits.context(0, 0, nullptr))[2] = 800.0;
  p.logits.row(p.logits.context(0, 1, &two))[1] = 800.0;
  p.logits.row(p.logits.context(0, 2, &one))[0] = 800.0;
  Rng rng(1);
  const Trajectory t = sample_trajectory(p, q, 3, rng);
  EXPECT_EQ(t.tokens, (TokenSeq{2, 1, 0}));
  for (double lp : t.behavior_logprobs) EXPECT_EQ(lp, 0.0);
  EXPECT_FALSE(t.reward.has_value());
}

TEST(SampleTrajectory, SeededDeterminism) {
  Rng init(9);
  PolicyParams p = flat_params(4, 4);
  oracle::randomize_logits(p, 1.0, init);
  const Question q = question(0, 0, {1});
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 50; ++i) {
    const Trajectory ta = sample_trajectory(p, q, 4, a);
    const Trajectory tb = sample_trajectory(p, q, 4, b);
    EXPECT_EQ(ta.tokens, tb.tokens);
    EXPECT_EQ(ta.behavior_logprobs, tb.behavior_logprobs);
  }
}

TEST(SampleTrajectory, UniformLogprobsWithoutEndToken) {
  PolicyParams p = flat_params(4, 3);
  // Make the end token unreachable so every rollout has length 3.
  for (std::size_t c = 0; c < p.logits.shape().num_contexts(); ++c) p.logits.row(c)[0] = -800.0;
  for (std::size_t c = 0; c < p.logits.shape().num_contexts(); ++c) {
    for (std::size_t j = 1; j < 4; ++j) p.logits.row(c)[j] = 0.0;
  }
  Rng rng(5);
  const Trajectory t = sample_trajectory(p, question(0, 0, {1}), 3, rng);
  ASSERT_EQ(t.tokens.size(), 3u);
  for (double lp : t.behavior_logprobs) EXPECT_NEAR(lp, std::log(1.0 / 3.0), 1e-12);

  const PolicyParams uniform = flat_params(4, 3);
  const TokenSeq seq = {1, 2, 3};
  for (double lp : sequence_logprobs(uniform, question(0, 0, {1}), seq)) {
    EXPECT_NEAR(lp, -1.3863, 1e-4);
  }
}

TEST(SampleTrajectory, StopsAtEndOrMaxLenAndRecordsVersion) {
  Rng rng(11);
  PolicyParams p = flat_params(3, 4);
  p.version = 17;
  for (int i = 0; i < 200; ++i) {
    const Trajectory t = sample_trajectory(p, question(0, 0, {1}), 4, rng);
    ASSERT_FALSE(t.tokens.empty());
    EXPECT_TRUE(t.tokens.back() == 0 || t.tokens.size() == 4);
    for (std::size_t j = 0; j + 1 < t.tokens.size(); ++j) EXPECT_NE(t.tokens[j], 0u);
    EXPECT_EQ(t.producer_version, 17u);
    EXPECT_EQ(t.behavior_logprobs.size(), t.tokens.size());
  }
}

TEST(SequenceLogprobs, RescoringUnderProducerIsExact) {
  Rng rng(2);
  PolicyParams p = flat_params(4, 4);
  oracle::randomize_logits(p, 2.0, rng);
  const Question q = question(0, 0, {3});
  for (int i = 0; i < 20; ++i) {
    const Trajectory t = sample_trajectory(p, q, 4, rng);
    EXPECT_EQ(sequence_logprobs(p, q, t.tokens), t.behavior_logprobs);
  }
}

TEST(SequenceLogprobs, UniformAndDeterministic) {
  const PolicyParams uniform = flat_params(4, 2);
  const TokenSeq two = {3, 1};
  const auto lps = sequence_logprobs(uniform, question(0, 0, {1}), two);
  EXPECT_DOUBLE_EQ(lps[0], std::log(0.25));
  EXPECT_DOUBLE_EQ(lps[1], std::log(0.25));

  PolicyParams det = flat_params(2, 2);
  const Question q = question(0, 0, {1});
  const Token one = 1;
  det.logits.row(det.logits.context(0, 0, nullptr))[1] = 800.0;
  det.logits.row(det.logits.context(0, 1, &one))[0] = 800.0;
  const TokenSeq path = {1, 0};
  for (double lp : sequence_logprobs(det, q, path)) EXPECT_EQ(lp, 0.0);
}

TEST(SequenceLogprobs, TokenOutOfRange) {
  const PolicyParams p = flat_params(3, 2);
  const TokenSeq bad = {1, 7};
  try {
    sequence_logprobs(p, question(0, 0, {1}), bad);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "token out of range");
  }
}

TEST(TrajectoryEntropy, GreedyPathIsZero) {
  PolicyParams det = flat_params(2, 2);
  const Question q = question(0, 0, {1});
  const Token one = 1;
  det.logits.row(det.logits.context(0, 0, nullptr))[1] = 800.0;
  det.logits.row(det.logits.context(0, 1, &one))[0] = 800.0;
  const TokenSeq path = {1, 0};
  EXPECT_NEAR(trajectory_entropy(det, q, path, EntropyMode::kMeanNll), 0.0, 1e-300);
  EXPECT_NEAR(trajectory_entropy(det, q, path, EntropyMode::kMeanDistEntropy), 0.0, 1e-12);
  EXPECT_DOUBLE_EQ(trajectory_perplexity(det, q, path), 1.0);
}

TEST(TrajectoryEntropy, UniformIsLogV) {
  const PolicyParams p = flat_params(4, 3);
  const TokenSeq seq = {2, 3, 0};
  const Question q = question(0, 0, {1});
  EXPECT_NEAR(trajectory_entropy(p, q, seq, EntropyMode::kMeanNll), std::log(4.0), 1e-12);
  EXPECT_NEAR(trajectory_entropy(p, q, seq, EntropyMode::kMeanDistEntropy), std::log(4.0),
              1e-12);
  EXPECT_NEAR(trajectory_perplexity(p, q, seq), 4.0, 1e-12);
}

TEST(TrajectoryEntropy, SkewedTwoTokenPolicy) {
  // pi = (0.75, 0.25) at every context; take the 0.25 branch twice.
  PolicyParams p = flat_params(2, 2);
  for (std::size_t c = 0; c < p.logits.shape().num_contexts(); ++c) {
    p.logits.row(c)[0] = std::log(0.75);
    p.logits.row(c)[1] = std::log(0.25);
  }
  const TokenSeq seq = {1, 1};
  const Question q = question(0, 0, {1});
  EXPECT_NEAR(trajectory_entropy(p, q, seq, EntropyMode::kMeanNll), 1.3863, 1e-4);
  EXPECT_NEAR(trajectory_entropy(p, q, seq, EntropyMode::kMeanDistEntropy), 0.5623, 1e-4);
}

TEST(TrajectoryEntropy, PerplexityOfUnitNll) {
  // A single token with probability 1/e has mean NLL exactly 1.
  PolicyParams p = flat_params(2, 1);
  const double a = std::log(std::exp(1.0) - 1.0);
  p.logits.row(p.logits.context(0, 0, nullptr))[0] = a;
  p.logits.row(p.logits.context(0, 0, nullptr))[1] = 0.0;
  const TokenSeq seq = {1};
  const Question q = question(0, 0, {1});
  EXPECT_NEAR(trajectory_entropy(p, q, seq, EntropyMode::kMeanNll), 1.0, 1e-12);
  EXPECT_NEAR(trajectory_perplexity(p, q, seq), 2.71828, 1e-5);
}

TEST(TrajectoryEntropy, BoundsOnRandomPolicies) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    PolicyParams p = flat_params(4, 4);
    oracle::randomize_logits(p, 3.0, rng);
    const Question q = question(0, 0, {1});
    const Trajectory t = sample_trajectory(p, q, 4, rng);
    const double h = trajectory_entropy(p, q, t.tokens, EntropyMode::kMeanDistEntropy);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(4.0) + 1e-12);
    EXPECT_GE(trajectory_perplexity(p, q, t.tokens), 1.0);
  }
}

TEST(TrajectoryEntropy, EmptySequence) {
  const PolicyParams p = flat_params(2, 2);
  const TokenSeq empty;
  EXPECT_THROW(trajectory_entropy(p, question(0, 0, {1}), empty, EntropyMode::kMeanNll), Error);
  EXPECT_THROW(trajectory_perplexity(p, question(0, 0, {1}), empty), Error);
}

TEST(LogprobGradient, OneHotMinusUniform) {
  const PolicyParams p = flat_params(2, 1);
  const TokenSeq seq = {0};
  const GradientTable g = logprob_gradient(p, question(0, 0, {1}), seq);
  EXPECT_DOUBLE_EQ(g.row(g.context(0, 0, nullptr))[0], 0.5);
  EXPECT_DOUBLE_EQ(g.row(g.context(0, 0, nullptr))[1], -0.5);
  double mass = 0.0;
  for (double x : g.values()) mass += std::abs(x);
  EXPECT_DOUBLE_EQ(mass, 1.0);
}

TEST(LogprobGradient, GreedyPathIsZero) {
  PolicyParams det = flat_params(2, 2);
  const Token one = 1;
  det.logits.row(det.logits.context(0, 0, nullptr))[1] = 800.0;
  det.logits.row(det.logits.context(0, 1, &one))[0] = 800.0;
  const TokenSeq path = {1, 0};
  const GradientTable g = logprob_gradient(det, question(0, 0, {1}), path);
  for (double x : g.values()) EXPECT_EQ(x, 0.0);
}

TEST(LogprobGradient, MatchesFiniteDifferences) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    PolicyParams p = flat_params(3, 3, 2);
    oracle::randomize_logits(p, 1.5, rng);
    const Question q = question(1, static_cast<std::uint32_t>(i % 2), {1});
    const Trajectory t = sample_trajectory(p, q, 3, rng);
    const GradientTable analytic = logprob_gradient(p, q, t.tokens);
    const GradientTable numeric = oracle::finite_difference_gradient(
        [&](const PolicyParams& x) {
          const auto lps = sequence_logprobs(x, q, t.tokens);
          return std::accumulate(lps.begin(), lps.end(), 0.0);
        },
        p);
    EXPECT_LT(oracle::relative_error(analytic.values(), numeric.values()), 1e-4);
  }
}

TEST(EntropyGradient, MatchesFiniteDifferences) {
  Rng rng(22);
  for (int i = 0; i < 30; ++i) {
    PolicyParams p = flat_params(4, 3);
    oracle::randomize_logits(p, 1.0, rng);
    const Question q = question(0, 0, {1});
    const Trajectory t = sample_trajectory(p, q, 3, rng);
    GradientTable analytic(p.shape());
    add_entropy_gradient(p, q, t.tokens, 1.0, analytic);
    const GradientTable numeric = oracle::finite_difference_gradient(
        [&](const PolicyParams& x) {
          return trajectory_entropy(x, q, t.tokens, EntropyMode::kMeanDistEntropy);
        },
        p);
    EXPECT_LT(oracle::relative_error(analytic.values(), numeric.values()), 1e-4);
  }
}

TEST(LogitTable, ContextsAreDistinct) {
  const PolicyShape shape{Vocabulary{3, 0}, 2, 3};
  const LogitTable t(shape);
  EXPECT_EQ(t.size(), shape.num_entries());
  std::set<std::size_t> seen;
  for (std::uint32_t c = 0; c < 2; ++c) {
    seen.insert(t.context(c, 0, nullptr));
    for (std::size_t pos = 1; pos < 3; ++pos) {
      for (Token prev = 0; prev < 3; ++prev) seen.insert(t.context(c, pos, &prev));
    }
  }
  EXPECT_EQ(seen.size(), 2u * (1u + 2u * 3u));
}

}  // namespace
}  // namespace exgrpo
