#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace mathbook;

namespace {

double population_variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

/// Group of one-token completions whose old log-probabilities put every
/// ratio at `ratio` under `params`.
RolloutBatch single_token_batch(const ToyPolicy& policy, const PolicyParams& params, const SyntheticTask& task,
                                std::vector<double> rewards, double ratio) {
  RolloutBatch b;
  b.task = &task;
  b.rewards = std::move(rewards);
  for (std::size_t i = 0; i < b.rewards.size(); ++i) {
    Completion c;
    c.tokens = {token::eos};
    const double lp = policy.logprob(params, task, c)[0];
    c.per_token_logprob = {lp};
    b.completions.push_back(c);
    b.logprobs_old.push_back({lp - std::log(ratio)});
    b.logprobs_ref.push_back({lp});
  }
  return b;
}

}  // namespace

TEST(Advantages, Examples) {
  EXPECT_EQ(advantages(std::vector<double>{0.5, 0.5, 0.5}), (std::vector<double>{0.0, 0.0, 0.0}));
  const auto two = advantages(std::vector<double>{1, 0});
  EXPECT_NEAR(two[0], 1.0, 1e-7);
  EXPECT_NEAR(two[1], -1.0, 1e-7);
  const auto four = advantages(std::vector<double>{1, 0, 0, 0});
  EXPECT_NEAR(four[0], 1.732, 1e-3);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(four[static_cast<std::size_t>(i)], -0.577, 1e-3);
}

TEST(Advantages, ZeroMeanUnitVarianceOnRandomRewards) {
  Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(8);
    for (auto& x : r) x = rng.below(3) == 0 ? static_cast<double>(rng.below(3)) * 0.45 : rng.uniform();
    const auto a = advantages(r);
    if (std::sqrt(population_variance(r)) <= 1e-8) continue;
    EXPECT_LT(std::abs(std::accumulate(a.begin(), a.end(), 0.0) / 8.0), 1e-9);
    EXPECT_NEAR(population_variance(a), 1.0, 1e-6);
  }
}

TEST(Surrogate, ClipBranchExamples) {
  const auto up = clipped_surrogate(1.5, 1.0, 0.2);
  EXPECT_DOUBLE_EQ(up.value, 1.2);
  EXPECT_TRUE(up.clipped);
  const auto down = clipped_surrogate(0.5, -1.0, 0.2);
  EXPECT_DOUBLE_EQ(down.value, -0.8);
  EXPECT_TRUE(down.clipped);
  const auto inside = clipped_surrogate(1.1, -2.0, 0.2);
  EXPECT_DOUBLE_EQ(inside.value, 1.1 * -2.0);
  EXPECT_FALSE(inside.clipped);
}

TEST(GrpoLoss, RatioOnePointFiveThroughTheFullLoss) {
  const ToyPolicy policy;
  const auto params = policy.init_params(3, 0.2);
  const auto task = make_task("t", {}, 1);
  const std::vector<RolloutBatch> batches{single_token_batch(policy, params, task, {1.0, 0.0}, 1.5)};
  GrpoConfig cfg;
  cfg.beta = 0.0;
  const auto res = grpo_loss(policy, params, batches, cfg);
  // A = [+1, -1]: min(1.5, 1.2) = 1.2 and min(-1.5, -1.2) = -1.5.
  EXPECT_NEAR(res.stats.surrogate, (1.2 - 1.5) / 2.0, 1e-6);
  EXPECT_NEAR(res.loss, 0.15, 1e-6);
  EXPECT_DOUBLE_EQ(res.stats.clip_fraction, 0.5);
}

TEST(GrpoLoss, ClipInactiveRegimeEqualsUnclippedTerm) {
  const ToyPolicy policy;
  const auto params = policy.init_params(3, 0.2);
  const auto task = make_task("t", {}, 1);
  const std::vector<double> rewards{0.9, 0.1, 0.0, 0.9};
  const std::vector<RolloutBatch> batches{single_token_batch(policy, params, task, rewards, 1.1)};
  GrpoConfig cfg;
  cfg.beta = 0.0;
  const auto res = grpo_loss(policy, params, batches, cfg);
  const auto a = advantages(rewards);
  double expect = 0.0;
  for (double x : a) expect += 1.1 * x / 4.0;
  EXPECT_DOUBLE_EQ(res.stats.surrogate, expect);
  EXPECT_EQ(res.stats.clip_fraction, 0.0);
}

TEST(Kl, K3Examples) {
  EXPECT_EQ(kl_k3(-1.3, -1.3), 0.0);
  // rho = pi_ref / pi_theta = 2.
  EXPECT_NEAR(kl_k3(std::log(0.25), std::log(0.5)), 2.0 - std::log(2.0) - 1.0, 1e-12);
  EXPECT_NEAR(kl_k3(std::log(0.25), std::log(0.5)), 0.3069, 1e-4);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double a = -5.0 * rng.uniform(), b = -5.0 * rng.uniform();
    EXPECT_GE(kl_k3(a, b), 0.0);
    if (a != b) EXPECT_GT(kl_k3(a, b), 0.0);
  }
}

TEST(Kl, ExactOnSupport) {
  const std::vector<double> p{std::log(0.5), std::log(0.25), std::log(0.25)};
  const std::vector<double> q{std::log(0.25), std::log(0.5), std::log(0.25)};
  EXPECT_EQ(kl_exact(p, p), 0.0);
  EXPECT_NEAR(kl_exact(p, q), 0.5 * std::log(2.0) + 0.25 * std::log(0.5), 1e-15);
  EXPECT_EQ(parse_kl_estimator("exact_on_support"), KlEstimator::exact_on_support);
  EXPECT_THROW(parse_kl_estimator("k2"), ValidationError);
}

TEST(GrpoLoss, GradientMatchesFiniteDifferences) {
  const ToyPolicy policy;
  for (auto estimator : {KlEstimator::k3, KlEstimator::exact_on_support}) {
    for (double beta : {0.0, 0.04}) {
      GrpoConfig cfg;
      cfg.beta = beta;
      cfg.epsilon = 0.2;
      cfg.kl_estimator = estimator;
      for (std::uint64_t point = 0; point < 5; ++point) {
        const auto pt = gradcheck::grpo_point(policy, estimator, point);
        const auto res = grpo_loss(policy, pt.params, pt.batches, cfg);
        const double err = gradcheck::max_relative_error(
            [&](const PolicyParams& p) { return grpo_loss(policy, p, pt.batches, cfg).loss; }, pt.params, res.grad);
        EXPECT_LT(err, 1e-4) << to_string(estimator) << " beta " << beta << " point " << point;
      }
    }
  }
}

TEST(GrpoLoss, IdentityPointGivesZeroLossAndGradient) {
  const ToyPolicy policy;
  const auto params = policy.init_params(5, 0.3);
  const auto task = make_task("t", {1, false, false}, 2);
  SampleOptions opts;
  opts.group_size = 4;
  opts.max_len = 8;
  const std::vector<RolloutBatch> batches{make_batch(policy, params, params, task, policy.sample(params, task, opts, 1),
                                                     {0.1, 0.1, 0.1, 0.1}, KlEstimator::k3)};
  GrpoConfig cfg;
  cfg.beta = 0.0;
  const auto res = grpo_loss(policy, params, batches, cfg);
  EXPECT_EQ(res.loss, 0.0);
  for (double g : res.grad) ASSERT_EQ(g, 0.0);

  auto updated = params;
  Optimizer(OptimizerConfig{OptimizerKind::sgd, 0.1}).step(updated, res.grad);
  EXPECT_EQ(updated.theta, params.theta);
}

TEST(GrpoLoss, NonFiniteRatioAbortsWithPosition) {
  const ToyPolicy policy;
  const auto params = policy.init_params(1);
  const auto task = make_task("t", {}, 1);
  auto b = single_token_batch(policy, params, task, {1.0, 0.0}, 1.0);
  b.logprobs_old[1][0] = -1e6;
  try {
    grpo_loss(policy, params, std::vector<RolloutBatch>{b}, GrpoConfig{});
    FAIL();
  } catch (const RuntimeAbort& e) {
    EXPECT_NE(std::string(e.what()).find("completion 1, token 0"), std::string::npos);
  }
}

TEST(GrpoLoss, InconsistentBatchRejected) {
  const ToyPolicy policy;
  const auto params = policy.init_params(1);
  const auto task = make_task("t", {}, 1);
  auto b = single_token_batch(policy, params, task, {1.0, 0.0}, 1.0);
  b.rewards.pop_back();
  EXPECT_THROW(grpo_loss(policy, params, std::vector<RolloutBatch>{b}, GrpoConfig{}), ValidationError);
}

TEST(GrpoConfig, Validation) {
  GrpoConfig c;
  EXPECT_NO_THROW(c.validate());
  c.group_size = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.epsilon = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.beta = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}

TEST(Optimizer, SgdAndAdamSteps) {
  PolicyParams p{{1.0, -1.0}, 0};
  Optimizer sgd({OptimizerKind::sgd, 0.5});
  sgd.step(p, std::vector<double>{2.0, -4.0});
  EXPECT_EQ(p.theta, (std::vector<double>{0.0, 1.0}));
  PolicyParams q{{0.0, 0.0}, 0};
  Optimizer adam({OptimizerKind::adam, 0.01});
  adam.step(q, std::vector<double>{3.0, -0.5});
  // First bias-corrected Adam step has magnitude lr in every coordinate.
  EXPECT_NEAR(q.theta[0], -0.01, 1e-9);
  EXPECT_NEAR(q.theta[1], 0.01, 1e-9);
  EXPECT_THROW(parse_optimizer("rmsprop"), ValidationError);
}

// ---------------------------------------------------------------------------
// train_stage

namespace {

struct ToyGroup {
  std::vector<SyntheticTask> tasks;
  std::vector<TaskGroup> groups;
};

ToyGroup toy_group(std::uint64_t seed, int problems = 3) {
  ToyGroup g;
  g.tasks = generate_tasks({0, false, false}, problems, seed);
  TaskGroup tg;
  for (const auto& t : g.tasks) tg.push_back({t.id, &t});
  g.groups.push_back(tg);
  return g;
}

TrainStageConfig toy_stage() {
  TrainStageConfig cfg;
  cfg.aggregation = Aggregation::rankwise;
  cfg.sampling.max_len = 8;
  cfg.optimizer = {OptimizerKind::adam, 0.02};
  return cfg;
}

}  // namespace

TEST(TrainStage, ZeroStepsLeavesParamsUnchanged) {
  const ToyPolicy policy;
  const auto g = toy_group(1);
  auto params = policy.init_params(1);
  const auto before = params;
  Optimizer opt(toy_stage().optimizer);
  const auto report = train_stage(policy, params, before, g.groups, toy_stage(), 0, 5, opt);
  EXPECT_TRUE(report.steps.empty());
  EXPECT_EQ(params.theta, before.theta);
  EXPECT_EQ(params.version, before.version);
  EXPECT_EQ(report.final_mean_reward, report.initial_mean_reward);
}

TEST(TrainStage, PrincipleGroupTrainingRaisesReward) {
  const ToyPolicy policy;
  const auto g = toy_group(11);
  auto params = policy.init_params(2);
  const auto ref = params;
  Optimizer opt(toy_stage().optimizer);
  const auto report = train_stage(policy, params, ref, g.groups, toy_stage(), 200, 3, opt);
  EXPECT_EQ(report.steps.size(), 200u);
  EXPECT_GT(report.final_mean_reward, report.initial_mean_reward);
}

TEST(TrainStage, DeterministicGivenSeed) {
  const ToyPolicy policy;
  const auto g = toy_group(4);
  auto run = [&] {
    auto params = policy.init_params(3);
    const auto ref = params;
    Optimizer opt(toy_stage().optimizer);
    const auto r = train_stage(policy, params, ref, g.groups, toy_stage(), 20, 9, opt);
    return std::make_pair(params.theta, r.final_mean_reward);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStage, LargeBetaKeepsPolicyAtReference) {
  const ToyPolicy policy;
  const auto g = toy_group(6);
  const auto ref = policy.init_params(4);
  auto drift = [&](double beta) {
    auto params = ref;
    auto cfg = toy_stage();
    cfg.grpo.beta = beta;
    // Plain SGD: Adam's normalised steps would hide the size of the KL pull.
    cfg.optimizer = {OptimizerKind::sgd, 1e-3};
    Optimizer opt(cfg.optimizer);
    train_stage(policy, params, ref, g.groups, cfg, 100, 2, opt);
    double d = 0.0;
    for (std::size_t i = 0; i < ref.theta.size(); ++i) d = std::max(d, std::abs(params.theta[i] - ref.theta[i]));
    return d;
  };
  const double free_drift = drift(0.0);
  const double pinned_drift = drift(1e3);
  EXPECT_LT(pinned_drift, 1e-3);
  EXPECT_LT(pinned_drift, 0.1 * free_drift) << pinned_drift << " vs " << free_drift;
}

TEST(TrainStage, EmitsMetricsAndRewardRows) {
  const ToyPolicy policy;
  const auto g = toy_group(2);
  auto params = policy.init_params(1);
  const auto ref = params;
  const auto dir = fixtures::temp_dir("stage_logs");
  JsonLinesWriter metrics(dir / "m.jsonl"), rewards(dir / "r.jsonl");
  int checkpoints = 0;
  auto cfg = toy_stage();
  cfg.checkpoint_every = 2;
  Optimizer opt(cfg.optimizer);
  train_stage(policy, params, ref, g.groups, cfg, 4, 1, opt,
              {&metrics, &rewards, [&](int, const PolicyParams&) { ++checkpoints; }});
  metrics.flush();
  rewards.flush();
  const auto m = read_json_lines(dir / "m.jsonl");
  ASSERT_EQ(m.size(), 4u);
  for (const char* key : {"step", "mean_reward", "loss", "kl", "clip_fraction", "grad_norm"}) {
    EXPECT_TRUE(m[0].contains(key)) << key;
  }
  const auto r = read_json_lines(dir / "r.jsonl");
  EXPECT_EQ(r.size(), 4u * 3u * 8u);
  for (const char* key : {"problem_id", "rollout_idx", "raw", "aggregated"}) EXPECT_TRUE(r[0].contains(key)) << key;
  EXPECT_EQ(checkpoints, 2);
  EXPECT_EQ(params.version, 4u);
}
