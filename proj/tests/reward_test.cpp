#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace mathbook;
using fixtures::completion;

TEST(Score, ThreeVerifierCases) {
  EXPECT_EQ(score(completion("42", true), "42"), 0.9);
  EXPECT_EQ(score(completion("41", true), "42"), 0.1);
  EXPECT_EQ(score(completion("41", false), "42"), 0.0);
}

TEST(Score, CorrectTextWithBrokenFormatEarnsNothing) {
  EXPECT_EQ(score(completion("42", false), "42"), 0.0);
}

TEST(Score, AnswersCompareAfterCanonicalisation) {
  EXPECT_EQ(score(completion(" 0.50", true), "0.5"), 0.9);
  EXPECT_EQ(score(completion("B", true), "b"), 0.9);
}

TEST(Score, AdditiveMode) {
  RewardConfig cfg;
  cfg.mode = RewardMode::additive;
  EXPECT_DOUBLE_EQ(score(completion("1", true), "1", cfg), 1.0);
  EXPECT_DOUBLE_EQ(score(completion("2", true), "1", cfg), 0.1);
  EXPECT_DOUBLE_EQ(score(completion("2", false), "1", cfg), 0.0);
  EXPECT_DOUBLE_EQ(cfg.max_value(), 1.0);
}

TEST(Score, InvalidConfigRejected) {
  RewardConfig cfg;
  cfg.format_value = 0.95;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  cfg.otherwise_value = -0.1;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(MeanReward, Examples) {
  EXPECT_DOUBLE_EQ(mean_reward(std::vector<double>{0.9, 0.1}), 0.5);
  EXPECT_DOUBLE_EQ(mean_reward(std::vector<double>{0.9}), 0.9);
  EXPECT_EQ(mean_reward(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_THROW(mean_reward(std::vector<double>{}), ValidationError);
}

TEST(Rankwise, WorkedExample) {
  const GroupRewards g{"p", {{0.9, 0.0, 0.1}, {0.1, 0.9, 0.9}}};
  const auto out = rankwise_aggregate(g);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_NEAR(out[0], 0.05, 1e-15);
  EXPECT_NEAR(out[1], 0.5, 1e-15);
  EXPECT_NEAR(out[2], 0.9, 1e-15);
}

TEST(Rankwise, SingleAndIdenticalProblems) {
  const std::vector<double> r{0.9, 0.0, 0.1, 0.1};
  std::vector<double> sorted = r;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(rankwise_aggregate({"p", {r}}), sorted);
  const auto same = rankwise_aggregate({"p", {r, r, r}});
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_NEAR(same[i], sorted[i], 1e-15);
}

TEST(Rankwise, RaggedGroupRejected) {
  EXPECT_THROW(rankwise_aggregate({"p", {{0.9, 0.1}, {0.1}}}), ValidationError);
  EXPECT_THROW(rankwise_aggregate({"p", {}}), ValidationError);
}

TEST(Rankwise, MatchesOracleAndInvariantsOnRandomGroups) {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const auto g = oracles::random_group(rng);
    const auto out = rankwise_aggregate(g);
    EXPECT_EQ(out, oracles::brute_force_rankwise(g));
    EXPECT_TRUE(std::is_sorted(out.begin(), out.end()));
    double grand = 0.0;
    for (const auto& r : g.per_problem) {
      for (double v : r) grand += v;
    }
    grand /= static_cast<double>(g.per_problem.size() * g.group_size());
    EXPECT_NEAR(mean_reward(out), grand, 1e-12);

    // Permutation invariance over rollouts and problems.
    auto shuffled = g;
    for (auto& r : shuffled.per_problem) std::reverse(r.begin(), r.end());
    std::reverse(shuffled.per_problem.begin(), shuffled.per_problem.end());
    const auto permuted = rankwise_aggregate(shuffled);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(permuted[i], out[i], 1e-15);
  }
}

TEST(Rankwise, AssignmentFollowsRolloutRank) {
  const GroupRewards g{"p", {{0.9, 0.0, 0.1}, {0.1, 0.9, 0.9}}};
  const auto mapped = assign_rankwise(g);
  EXPECT_NEAR(mapped[0][0], 0.9, 1e-15);
  EXPECT_NEAR(mapped[0][1], 0.05, 1e-15);
  EXPECT_NEAR(mapped[0][2], 0.5, 1e-15);
  // Tied 0.9 rewards: the earlier rollout takes the lower rank.
  EXPECT_NEAR(mapped[1][0], 0.05, 1e-15);
  EXPECT_NEAR(mapped[1][1], 0.5, 1e-15);
  EXPECT_NEAR(mapped[1][2], 0.9, 1e-15);
}

TEST(Aggregation, MeanAndNone) {
  const GroupRewards g{"p", {{0.9, 0.0}, {0.1, 0.0}}};
  EXPECT_EQ(aggregate(g, Aggregation::none), g.per_problem);
  const auto m = aggregate(g, Aggregation::mean);
  EXPECT_NEAR(m[0][0], 0.5, 1e-15);
  EXPECT_EQ(m[0], m[1]);
  EXPECT_EQ(parse_aggregation("rankwise"), Aggregation::rankwise);
  EXPECT_THROW(parse_aggregation("median"), ValidationError);
}
