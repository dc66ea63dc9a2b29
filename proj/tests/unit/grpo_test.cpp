#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "exgrpo/error.hpp"
#include "exgrpo/grpo.hpp"
#include "exgrpo/oracle.hpp"
#include "test_util.hpp"

namespace exgrpo {
namespace {

TEST(GroupAdvantages, CenterOnly) {
  const std::vector<int> r = {1, 1, 0, 0};
  EXPECT_EQ(group_advantages(r, {}), (std::vector<double>{0.5, 0.5, -0.5, -0.5}));
  const std::vector<int> same = {1, 1, 1, 1};
  EXPECT_EQ(group_advantages(same, {}), (std::vector<double>{0, 0, 0, 0}));
  EXPECT_EQ(group_advantages(same, {true}), (std::vector<double>{0, 0, 0, 0}));
}

TEST(GroupAdvantages, StdScaling) {
  const std::vector<int> r = {1, 0, 0, 0};
  const auto a = group_advantages(r, {true});
  EXPECT_NEAR(a[0], 1.7320508, 1e-6);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(a[i], -0.5773503, 1e-6);
}

TEST(GroupAdvantages, SumToZero) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> r(2 + rng.uniform_index(8));
    for (int& x : r) x = rng.uniform01() < 0.4 ? 1 : 0;
    const auto a = group_advantages(r, {});
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 0.0, 1e-10);
  }
}

TEST(GroupAdvantages, GroupTooSmall) {
  try {
    group_advantages(std::vector<int>{1}, {});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "group too small");
  }
}

TEST(ImportanceRatio, Examples) {
  EXPECT_EQ(importance_ratio(-0.7, -0.7), 1.0);
  EXPECT_NEAR(importance_ratio(-0.5, -1.0), 1.6487, 1e-4);
  EXPECT_NEAR(importance_ratio(-2.0, -1.0), 0.3679, 1e-4);
}

TEST(ClipTerm, Examples) {
  EXPECT_DOUBLE_EQ(clip_term(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clip_term(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clip_term(1.0, 0.37, 0.2), 0.37);
  EXPECT_DOUBLE_EQ(clip_term(1.0, -2.5, 0.2), -2.5);
}

TEST(ClipTerm, IdentityInsideBand) {
  for (double w = 0.8; w <= 1.2; w += 0.01) {
    for (double a : {-1.5, -0.2, 0.0, 0.7}) EXPECT_DOUBLE_EQ(clip_term(w, a, 0.2), w * a);
  }
}

TEST(MaskedIndicator, Bands) {
  EXPECT_TRUE(masked_indicator(0.5, 0.25, 0.75));
  EXPECT_FALSE(masked_indicator(0.875, 0.25, 0.75));
  EXPECT_TRUE(masked_indicator(0.25, 0.25, 0.75));
  EXPECT_TRUE(masked_indicator(0.75, 0.25, 0.75));
  for (double acc = 0.0; acc <= 1.0; acc += 0.125) EXPECT_TRUE(masked_indicator(acc, 0.0, 1.0));
}

struct Fixture {
  TaskSuite suite = testing::make_suite(3, {{1}, {2, 1}});
  TrainConfig cfg;
  PolicyParams params{policy_shape_for(suite, 3)};
  std::vector<GroupRollout> groups;

  Fixture(std::uint64_t seed, std::size_t k, bool random_rewards) {
    cfg.max_len = 3;
    cfg.group_size = k;
    Rng rng(seed);
    oracle::randomize_logits(params, 1.0, rng);
    for (const Question& q : suite.questions) {
      GroupRollout& g = groups.emplace_back();
      g.question_id = q.id;
      for (std::size_t i = 0; i < k; ++i) {
        Trajectory t = sample_trajectory(params, q, 3, rng);
        const int r = random_rewards ? (i % 2 == 0 ? 1 : 0) : verify(suite, q, t.tokens);
        t.reward = r;
        g.rewards.push_back(r);
        g.trajectories.push_back(std::move(t));
      }
      g.advantages = group_advantages(g.rewards, cfg.advantage_mode);
    }
  }
};

TEST(OnPolicyObjective, EqualRewardsGiveZeroSurrogate) {
  Fixture fx(3, 4, false);
  for (GroupRollout& g : fx.groups) {
    for (int& r : g.rewards) r = 1;
    g.advantages = group_advantages(g.rewards, fx.cfg.advantage_mode);
  }
  fx.cfg.entropy_coeff = 0.0;
  const ObjectiveResult res = on_policy_objective(fx.groups, fx.params, fx.suite, fx.cfg);
  EXPECT_EQ(res.value, 0.0);
  for (double x : res.gradient.values()) EXPECT_EQ(x, 0.0);
}

TEST(OnPolicyObjective, TwoMemberGroupAtRolloutPoint) {
  // One group (1, 0) at theta = theta_old: value 0.5*|o1| - 0.5*|o2| from
  // w = 1 per token, gradient 0.5*(grad log pi(o1) - grad log pi(o2)) / 1 group.
  TaskSuite suite = testing::make_suite(3, {{1}});
  TrainConfig cfg;
  cfg.entropy_coeff = 0.0;
  cfg.max_len = 3;
  PolicyParams p(policy_shape_for(suite, 3));
  Rng rng(4);
  oracle::randomize_logits(p, 1.0, rng);
  const Question& q = suite.questions[0];
  GroupRollout g;
  g.question_id = 0;
  for (const TokenSeq& toks : {TokenSeq{1, 0}, TokenSeq{2, 2, 0}}) {
    Trajectory t;
    t.tokens = toks;
    t.behavior_logprobs = sequence_logprobs(p, q, toks);
    t.producer_version = p.version;
    g.trajectories.push_back(t);
  }
  g.rewards = {1, 0};
  g.advantages = group_advantages(g.rewards, {});
  const std::vector<GroupRollout> groups = {g};
  const ObjectiveResult res = on_policy_objective(groups, p, suite, cfg);
  EXPECT_NEAR(res.value, 0.5 * (0.5 * 2.0) + 0.5 * (-0.5 * 3.0), 1e-15);

  GradientTable expected = logprob_gradient(p, q, g.trajectories[0].tokens);
  expected.add_scaled(logprob_gradient(p, q, g.trajectories[1].tokens), -1.0);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_NEAR(res.gradient[i], 0.25 * expected[i], 1e-14);
  }
  const GradientTable numeric = oracle::finite_difference_gradient(
      [&](const PolicyParams& x) { return on_policy_objective(groups, x, suite, cfg).value; }, p);
  EXPECT_LT(oracle::relative_error(res.gradient.values(), numeric.values()), 1e-4);
}

TEST(OnPolicyObjective, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Fixture fx(seed, 2 + seed % 4, true);
    fx.cfg.use_clip = seed % 2 == 0;
    fx.cfg.entropy_coeff = seed % 3 == 0 ? 0.0 : 0.01;
    PolicyParams eval = fx.params;
    Rng rng(seed + 1000);
    PolicyParams delta(eval.shape());
    oracle::randomize_logits(delta, 0.3, rng);
    eval.logits.add_scaled(delta.logits, 1.0);
    const ObjectiveResult res = on_policy_objective(fx.groups, eval, fx.suite, fx.cfg);
    const GradientTable numeric = oracle::finite_difference_gradient(
        [&](const PolicyParams& x) {
          return on_policy_objective(fx.groups, x, fx.suite, fx.cfg).value;
        },
        eval);
    EXPECT_LT(oracle::relative_error(res.gradient.values(), numeric.values()), 1e-4)
        << "seed " << seed;
  }
}

TEST(OnPolicyObjective, StaleRollout) {
  Fixture fx(5, 3, true);
  PolicyParams newer = fx.params;
  newer.version += 1;
  try {
    on_policy_objective(fx.groups, newer, fx.suite, fx.cfg);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "stale rollout");
  }
}

TEST(OnPolicyObjective, FullBandMaskIsBitIdentical) {
  Fixture fx(6, 4, false);
  const ObjectiveResult plain = on_policy_objective(fx.groups, fx.params, fx.suite, fx.cfg);
  TrainConfig masked = fx.cfg;
  masked.mask_band = MaskBand{0.0, 1.0};
  const ObjectiveResult m = on_policy_objective(fx.groups, fx.params, fx.suite, masked);
  EXPECT_EQ(plain.value, m.value);
  EXPECT_TRUE(plain.gradient == m.gradient);
}

TEST(OnPolicyObjective, MaskedGroupsContributeOnlyEntropy) {
  Fixture fx(7, 4, true);  // every group has accuracy 0.5
  TrainConfig masked = fx.cfg;
  masked.mask_band = MaskBand{0.6, 1.0};
  TrainConfig no_surrogate = fx.cfg;
  for (GroupRollout& g : fx.groups) std::fill(g.advantages.begin(), g.advantages.end(), 0.0);
  const ObjectiveResult m = on_policy_objective(fx.groups, fx.params, fx.suite, masked);
  const ObjectiveResult z = on_policy_objective(fx.groups, fx.params, fx.suite, no_surrogate);
  EXPECT_EQ(m.value, z.value);
}

TEST(GroupRollout, Validation) {
  GroupRollout g;
  g.trajectories.resize(1);
  g.rewards = {1};
  g.advantages = {0.0};
  EXPECT_THROW(g.validate(), Error);
  g.trajectories.resize(2);
  g.rewards = {0, 1};
  g.advantages = {-0.5, 0.5};
  g.replay_slot = 0;
  try {
    g.validate();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "replayed member reward must be 1");
  }
}

}  // namespace
}  // namespace exgrpo
