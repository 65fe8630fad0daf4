#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/policy.hpp"
#include "mathbook/reward.hpp"
#include "mathbook/rng.hpp"

namespace mathbook {

enum class KlEstimator { k3, exact_on_support };

inline std::string_view to_string(KlEstimator k) { return k == KlEstimator::k3 ? "k3" : "exact_on_support"; }

inline KlEstimator parse_kl_estimator(std::string_view s) {
  if (s == "k3") return KlEstimator::k3;
  if (s == "exact_on_support") return KlEstimator::exact_on_support;
  throw ValidationError("unknown KL estimator '" + std::string(s) + "'");
}

struct GrpoConfig {
  double epsilon = 0.2;
  double beta = 0.04;
  int group_size = 8;
  double learning_rate = 1e-6;
  double advantage_epsilon = 1e-8;
  KlEstimator kl_estimator = KlEstimator::k3;

  void validate() const {
    if (!(epsilon > 0.0)) throw ValidationError("grpo: epsilon must be > 0");
    if (!(beta >= 0.0)) throw ValidationError("grpo: beta must be >= 0");
    if (group_size < 2) throw ValidationError("grpo: group size must be >= 2");
    if (!(learning_rate > 0.0)) throw ValidationError("grpo: learning rate must be > 0");
    if (!(advantage_epsilon >= 0.0)) throw ValidationError("grpo: advantage epsilon must be >= 0");
  }
};

/// Group-normalized advantages (r - mean) / (population std + eps).
/// Zero-variance groups give exactly zero.
inline std::vector<double> advantages(std::span<const double> rewards, double eps = 1e-8) {
  const std::size_t n = rewards.size();
  if (n == 0) return {};
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  const double denom = std::sqrt(var) + eps;
  std::vector<double> out(n, 0.0);
  const bool all_equal = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
  if (all_equal) return out;
  for (std::size_t i = 0; i < n; ++i) out[i] = (rewards[i] - mean) / denom;
  return out;
}

/// k3 estimator rho - ln rho - 1 with rho = pi_ref / pi_theta at the sampled token.
inline double kl_k3(double logp_current, double logp_ref) {
  const double d = logp_ref - logp_current;
  return std::exp(d) - d - 1.0;
}

/// Exact KL(current || ref) over the vocabulary at one position.
inline double kl_exact(std::span<const double> logp_current, std::span<const double> logp_ref) {
  double kl = 0.0;
  for (std::size_t v = 0; v < logp_current.size(); ++v) {
    kl += std::exp(logp_current[v]) * (logp_current[v] - logp_ref[v]);
  }
  return kl;
}

struct SurrogateTerm {
  double value = 0.0;
  bool clipped = false;  // the clipped branch is the strict minimum
};

/// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A).
inline SurrogateTerm clipped_surrogate(double ratio, double advantage, double epsilon) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage;
  if (unclipped <= clipped) return {unclipped, false};
  return {clipped, true};
}

/// G completions of one task with frozen old/ref scores and post-aggregation rewards.
struct RolloutBatch {
  const SyntheticTask* task = nullptr;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  std::vector<std::vector<double>> logprobs_old;
  std::vector<std::vector<double>> logprobs_ref;
  /// Filled only for the exact-on-support estimator.
  std::vector<LogDistributions> ref_distributions;

  void validate() const {
    const std::size_t g = completions.size();
    if (task == nullptr) throw ValidationError("rollout batch: missing task");
    if (rewards.size() != g || logprobs_old.size() != g || logprobs_ref.size() != g) {
      throw ValidationError("rollout batch: inconsistent group shapes");
    }
    for (std::size_t i = 0; i < g; ++i) {
      const std::size_t len = completions[i].tokens.size();
      if (len == 0 || logprobs_old[i].size() != len || logprobs_ref[i].size() != len) {
        throw ValidationError("rollout batch: inconsistent token shapes at completion " + std::to_string(i));
      }
    }
  }
};

inline RolloutBatch make_batch(const ToyPolicy& policy, const PolicyParams& old_params, const PolicyParams& ref_params,
                               const SyntheticTask& task, std::vector<Completion> completions,
                               std::vector<double> rewards, KlEstimator estimator) {
  RolloutBatch b;
  b.task = &task;
  b.completions = std::move(completions);
  b.rewards = std::move(rewards);
  for (const auto& c : b.completions) {
    b.logprobs_old.push_back(policy.logprob(old_params, task, c));
    if (estimator == KlEstimator::exact_on_support) {
      auto dist = policy.log_distributions(ref_params, task, c);
      std::vector<double> lp;
      for (std::size_t t = 0; t < c.tokens.size(); ++t) lp.push_back(dist[t][static_cast<std::size_t>(c.tokens[t])]);
      b.logprobs_ref.push_back(std::move(lp));
      b.ref_distributions.push_back(std::move(dist));
    } else {
      b.logprobs_ref.push_back(policy.logprob(ref_params, task, c));
    }
  }
  return b;
}

struct GrpoStats {
  double surrogate = 0.0;
  double kl = 0.0;  // mean per-token KL
  double clip_fraction = 0.0;
  std::size_t tokens = 0;
};

struct GrpoResult {
  double loss = 0.0;
  std::vector<double> grad;
  GrpoStats stats;
};

/// Negative clipped-ratio objective with a per-token KL penalty, averaged
/// over tokens of each completion, over the G completions, then over batches.
/// The gradient is with respect to `params` only; old/ref scores are frozen.
inline GrpoResult grpo_loss(const ToyPolicy& policy, const PolicyParams& params, std::span<const RolloutBatch> batches,
                            const GrpoConfig& cfg) {
  GrpoResult out;
  out.grad.assign(policy.parameter_count(), 0.0);
  if (batches.empty()) return out;
  const auto V = static_cast<std::size_t>(policy.shape().vocab);
  const double batch_w = 1.0 / static_cast<double>(batches.size());
  double kl_sum = 0.0;
  std::size_t clipped = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    batch.validate();
    const std::size_t g = batch.completions.size();
    const auto adv = advantages(batch.rewards, cfg.advantage_epsilon);
    const bool exact = cfg.kl_estimator == KlEstimator::exact_on_support;
    if (exact && batch.ref_distributions.size() != g) {
      throw ValidationError("rollout batch: exact KL needs reference distributions");
    }
    for (std::size_t i = 0; i < g; ++i) {
      const auto& c = batch.completions[i];
      const std::size_t len = c.tokens.size();
      const double w = batch_w / (static_cast<double>(g) * static_cast<double>(len));
      LogDistributions cur_dist;
      std::vector<double> cur;
      if (exact) {
        cur_dist = policy.log_distributions(params, *batch.task, c);
        for (std::size_t t = 0; t < len; ++t) cur.push_back(cur_dist[t][static_cast<std::size_t>(c.tokens[t])]);
      } else {
        cur = policy.logprob(params, *batch.task, c);
      }
      LogDistributions dlogp(len, std::vector<double>(V, 0.0));
      for (std::size_t t = 0; t < len; ++t) {
        const double ratio = std::exp(cur[t] - batch.logprobs_old[i][t]);
        if (!std::isfinite(ratio)) {
          throw RuntimeAbort("grpo: non-finite ratio at batch " + std::to_string(b) + ", completion " +
                             std::to_string(i) + ", token " + std::to_string(t));
        }
        const auto term = clipped_surrogate(ratio, adv[i], cfg.epsilon);
        const double surrogate = term.value;
        // d(ratio * A)/d logp = ratio * A on the unclipped branch, 0 when clipped.
        const double d_surrogate = term.clipped ? 0.0 : term.value;
        if (term.clipped) ++clipped;
        double kl = 0.0;
        auto& row = dlogp[t];
        if (exact) {
          const auto& p_log = cur_dist[t];
          const auto& q_log = batch.ref_distributions[i][t];
          kl = kl_exact(p_log, q_log);
          for (std::size_t v = 0; v < V; ++v) {
            const double p = std::exp(p_log[v]);
            row[v] += w * cfg.beta * p * (p_log[v] - q_log[v] + 1.0);
          }
        } else {
          kl = kl_k3(cur[t], batch.logprobs_ref[i][t]);
          row[static_cast<std::size_t>(c.tokens[t])] += w * cfg.beta * (1.0 - std::exp(batch.logprobs_ref[i][t] - cur[t]));
        }
        row[static_cast<std::size_t>(c.tokens[t])] -= w * d_surrogate;
        out.loss -= w * (surrogate - cfg.beta * kl);
        out.stats.surrogate += w * surrogate;
        kl_sum += kl;
        ++out.stats.tokens;
      }
      policy.accumulate_gradient(params, *batch.task, c, dlogp, out.grad);
    }
  }
  if (out.stats.tokens > 0) {
    out.stats.kl = kl_sum / static_cast<double>(out.stats.tokens);
    out.stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(out.stats.tokens);
  }
  if (!std::isfinite(out.loss)) throw RuntimeAbort("grpo: non-finite loss");
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a flat parameter vector. Adam keeps its moment
/// estimates between steps.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }

  void step(PolicyParams& params, std::span<const double> grad, double lr_scale = 1.0) {
    const double lr = cfg_.learning_rate * lr_scale;
    std::vector<double> delta(grad.size());
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < grad.size(); ++i) delta[i] = -lr * grad[i];
    } else {
      if (m_.size() != grad.size()) {
        m_.assign(grad.size(), 0.0);
        v_.assign(grad.size(), 0.0);
        t_ = 0;
      }
      ++t_;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < grad.size(); ++i) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        delta[i] = -lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.epsilon);
      }
    }
    params.apply_update(delta);
  }

 private:
  OptimizerConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Training stage

struct StageTask {
  std::string problem_id;
  const SyntheticTask* task = nullptr;
};

/// Tasks whose rewards are aggregated together (one principle group, or a
/// single problem when aggregation is off).
using TaskGroup = std::vector<StageTask>;

struct TrainStageConfig {
  GrpoConfig grpo;
  SampleOptions sampling;
  RewardConfig reward;
  Aggregation aggregation = Aggregation::none;
  OptimizerConfig optimizer;
  int updates_per_batch = 1;
  int eval_rollouts = 32;
  int checkpoint_every = 0;
};

struct StepMetrics {
  int step = 0;
  double mean_reward = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;

  json to_json() const {
    return {{"step", step}, {"mean_reward", mean_reward}, {"loss", loss},
            {"kl", kl}, {"clip_fraction", clip_fraction}, {"grad_norm", grad_norm}};
  }
};

struct TrainingReport {
  double initial_mean_reward = 0.0;
  double final_mean_reward = 0.0;
  std::vector<StepMetrics> steps;

  json to_json() const {
    json s = json::array();
    for (const auto& m : steps) s.push_back(m.to_json());
    return {{"initial_mean_reward", initial_mean_reward}, {"final_mean_reward", final_mean_reward},
            {"steps", steps.size()}};
  }
};

struct StageSinks {
  JsonLinesWriter* metrics = nullptr;
  JsonLinesWriter* rewards = nullptr;
  std::function<void(int step, const PolicyParams&)> on_checkpoint;
};

/// Mean raw reward of `rollouts` samples per task, drawn from a fixed stream.
inline double evaluate_mean_reward(const ToyPolicy& policy, const PolicyParams& params,
                                   std::span<const TaskGroup> groups, const TrainStageConfig& cfg,
                                   std::uint64_t seed) {
  double sum = 0.0;
  std::size_t n = 0;
  SampleOptions opts = cfg.sampling;
  opts.group_size = cfg.eval_rollouts;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups[gi].size(); ++pi) {
      const auto& st = groups[gi][pi];
      const auto samples = policy.sample(params, *st.task, opts, derive_seed(derive_seed(seed, gi), pi));
      for (const auto& c : samples) {
        sum += score(c, st.task->correct_answer, cfg.reward);
        ++n;
      }
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// Rollout -> score -> aggregate -> advantages -> loss -> update, one task
/// group per step in round-robin order. The old policy is the parameter
/// snapshot taken when the rollouts are drawn.
inline TrainingReport train_stage(const ToyPolicy& policy, PolicyParams& params, const PolicyParams& ref_params,
                                  std::span<const TaskGroup> groups, const TrainStageConfig& cfg, int steps,
                                  std::uint64_t seed, Optimizer& optimizer, const StageSinks& sinks = {}) {
  cfg.grpo.validate();
  cfg.reward.validate();
  if (groups.empty()) throw ValidationError("train_stage: no task groups");
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("train_stage: empty task group");
  }
  TrainingReport report;
  report.initial_mean_reward = evaluate_mean_reward(policy, params, groups, cfg, derive_seed(seed, "eval"));

  SampleOptions opts = cfg.sampling;
  opts.group_size = cfg.grpo.group_size;
  for (int step = 0; step < steps; ++step) {
    const std::size_t gi = static_cast<std::size_t>(step) % groups.size();
    const TaskGroup& group = groups[gi];
    const PolicyParams old_params = params;
    const std::uint64_t step_seed = derive_seed(derive_seed(seed, "rollout"), static_cast<std::uint64_t>(step));

    std::vector<std::vector<Completion>> samples;
    GroupRewards raw;
    double reward_sum = 0.0;
    for (std::size_t pi = 0; pi < group.size(); ++pi) {
      samples.push_back(policy.sample(old_params, *group[pi].task, opts, derive_seed(step_seed, pi)));
      std::vector<double> r;
      for (const auto& c : samples.back()) {
        r.push_back(score(c, group[pi].task->correct_answer, cfg.reward));
        reward_sum += r.back();
      }
      raw.per_problem.push_back(std::move(r));
    }
    const auto shaped = aggregate(raw, cfg.aggregation);

    std::vector<RolloutBatch> batches;
    for (std::size_t pi = 0; pi < group.size(); ++pi) {
      if (sinks.rewards != nullptr) {
        for (std::size_t i = 0; i < shaped[pi].size(); ++i) {
          sinks.rewards->write({{"step", step}, {"problem_id", group[pi].problem_id}, {"rollout_idx", i},
                                {"raw", raw.per_problem[pi][i]}, {"aggregated", shaped[pi][i]}});
        }
      }
      batches.push_back(make_batch(policy, old_params, ref_params, *group[pi].task, std::move(samples[pi]),
                                   shaped[pi], cfg.grpo.kl_estimator));
    }

    StepMetrics m;
    m.step = step;
    m.mean_reward = reward_sum / static_cast<double>(group.size() * static_cast<std::size_t>(opts.group_size));
    for (int u = 0; u < std::max(1, cfg.updates_per_batch); ++u) {
      const auto res = grpo_loss(policy, params, batches, cfg.grpo);
      if (!std::isfinite(res.loss)) throw RuntimeAbort("train_stage: non-finite loss at step " + std::to_string(step));
      if (u == 0) {
        m.loss = res.loss;
        m.kl = res.stats.kl;
        m.clip_fraction = res.stats.clip_fraction;
        m.grad_norm = l2_norm(res.grad);
      }
      optimizer.step(params, res.grad);
    }
    report.steps.push_back(m);
    if (sinks.metrics != nullptr) sinks.metrics->write(m.to_json());
    if (sinks.on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      sinks.on_checkpoint(step + 1, params);
    }
  }
  report.final_mean_reward = steps == 0 ? report.initial_mean_reward
                                        : evaluate_mean_reward(policy, params, groups, cfg, derive_seed(seed, "eval"));
  return report;
}

}  // namespace mathbook
