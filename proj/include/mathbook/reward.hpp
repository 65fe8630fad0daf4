#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mathbook/canonical.hpp"
#include "mathbook/error.hpp"
#include "mathbook/policy.hpp"

namespace mathbook {

enum class RewardMode { piecewise, additive };

/// Verifier reward levels. Piecewise mode yields exactly one of the three
/// values; additive mode sums the accuracy and format components.
struct RewardConfig {
  double correct_value = 0.9;
  double format_value = 0.1;
  double otherwise_value = 0.0;
  RewardMode mode = RewardMode::piecewise;

  void validate() const {
    if (!(correct_value >= format_value && format_value >= otherwise_value && otherwise_value >= 0.0)) {
      throw ValidationError("reward config: need correct >= format >= otherwise >= 0");
    }
  }

  double max_value() const {
    return mode == RewardMode::piecewise ? correct_value : correct_value + format_value;
  }
};

/// `answer` is compared after canonicalization of both sides.
inline double score(const Completion& completion, std::string_view answer, const RewardConfig& cfg = {}) {
  const bool correct = completion.format_ok && answers_match(completion.decoded_answer, answer);
  if (cfg.mode == RewardMode::additive) {
    return (correct ? cfg.correct_value : 0.0) + (completion.format_ok ? cfg.format_value : 0.0);
  }
  if (correct) return cfg.correct_value;
  if (completion.format_ok) return cfg.format_value;
  return cfg.otherwise_value;
}

inline double mean_reward(std::span<const double> rewards) {
  if (rewards.empty()) throw ValidationError("mean_reward: empty reward list");
  return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
}

/// Rollout rewards of the problems sharing one principle.
struct GroupRewards {
  std::string principle_id;
  std::vector<std::vector<double>> per_problem;

  std::size_t group_size() const { return per_problem.empty() ? 0 : per_problem.front().size(); }

  void validate() const {
    if (per_problem.empty()) throw ValidationError("group rewards: no problems");
    const std::size_t g = per_problem.front().size();
    if (g == 0) throw ValidationError("group rewards: no rollouts");
    for (const auto& r : per_problem) {
      if (r.size() != g) throw ValidationError("group rewards: ragged rollout counts");
    }
  }
};

/// Sort each problem's rewards ascending, then average across problems at
/// every sorted position. The result is non-decreasing.
inline std::vector<double> rankwise_aggregate(const GroupRewards& group) {
  group.validate();
  const std::size_t g = group.group_size();
  std::vector<double> sums(g, 0.0);
  std::vector<double> sorted;
  for (const auto& rewards : group.per_problem) {
    sorted.assign(rewards.begin(), rewards.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < g; ++i) sums[i] += sorted[i];
  }
  const double m = static_cast<double>(group.per_problem.size());
  for (auto& s : sums) s /= m;
  return sums;
}

/// Rank of every rollout within its own problem (0 = smallest reward); ties
/// are ordered by rollout index.
inline std::vector<std::size_t> rollout_ranks(std::span<const double> rewards) {
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rewards[a] < rewards[b]; });
  std::vector<std::size_t> rank(rewards.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

/// Attaches the aggregated position means back to rollouts by rank.
inline std::vector<std::vector<double>> assign_rankwise(const GroupRewards& group) {
  const auto agg = rankwise_aggregate(group);
  std::vector<std::vector<double>> out;
  out.reserve(group.per_problem.size());
  for (const auto& rewards : group.per_problem) {
    const auto rank = rollout_ranks(rewards);
    std::vector<double> mapped(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) mapped[i] = agg[rank[i]];
    out.push_back(std::move(mapped));
  }
  return out;
}

/// Per-rollout-index mean across the problems of a group: every problem's
/// rollout i receives (1/m) * sum_t r_t[i].
inline std::vector<std::vector<double>> assign_mean(const GroupRewards& group) {
  group.validate();
  const std::size_t g = group.group_size();
  std::vector<double> mean(g, 0.0);
  for (const auto& r : group.per_problem) {
    for (std::size_t i = 0; i < g; ++i) mean[i] += r[i];
  }
  for (auto& v : mean) v /= static_cast<double>(group.per_problem.size());
  return std::vector<std::vector<double>>(group.per_problem.size(), mean);
}

enum class Aggregation { none, mean, rankwise };

inline std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::none: return "none";
    case Aggregation::mean: return "mean";
    case Aggregation::rankwise: return "rankwise";
  }
  return "none";
}

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "none") return Aggregation::none;
  if (s == "mean") return Aggregation::mean;
  if (s == "rankwise") return Aggregation::rankwise;
  throw ValidationError("unknown aggregation '" + std::string(s) + "'");
}

inline std::vector<std::vector<double>> aggregate(const GroupRewards& group, Aggregation mode) {
  switch (mode) {
    case Aggregation::mean: return assign_mean(group);
    case Aggregation::rankwise: return assign_rankwise(group);
    case Aggregation::none: break;
  }
  group.validate();
  return group.per_problem;
}

}  // namespace mathbook
