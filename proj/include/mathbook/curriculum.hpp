#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/problem_corpus.hpp"

namespace mathbook {

enum class NodeStatus { pending, passed, failed, unresolved };

inline std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::pending: return "pending";
    case NodeStatus::passed: return "passed";
    case NodeStatus::failed: return "failed";
    case NodeStatus::unresolved: return "unresolved";
  }
  return "pending";
}

struct CurriculumNode {
  std::string lattice_id;
  std::string key;  // lattice axis key
  DifficultyCoordinate coordinate;
  std::string problem_id;
  NodeStatus status = NodeStatus::pending;
};

/// Main path through a lattice: seed, s, s+v, s+c, s+v+c.
inline constexpr std::array<std::string_view, 5> kTrajectoryKeys = {"seed", "s", "sv", "sc", "svc"};
/// Index of the node each trajectory position is reached from (-1 for the seed).
inline constexpr std::array<int, 5> kTransitionSource = {-1, 0, 1, 1, 3};

/// Validated main path; throws naming the first violated lattice rule.
inline std::vector<CurriculumNode> trajectory(const DifficultyLattice& lattice, const Corpus& corpus) {
  const auto report = validate_lattice(lattice, corpus);
  if (const auto* bad = report.first_failure()) {
    throw ValidationError("lattice '" + lattice.seed_id + "': " + bad->rule + " violated: " + bad->detail);
  }
  std::vector<CurriculumNode> nodes;
  for (auto key : kTrajectoryKeys) {
    const auto& id = lattice.nodes.at(std::string(key));
    nodes.push_back({lattice.seed_id, std::string(key), corpus.at(id).difficulty, id, NodeStatus::pending});
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// Increments

enum class IncrementKind { knowledge, modality };

inline std::string_view to_string(IncrementKind k) { return k == IncrementKind::knowledge ? "knowledge" : "modality"; }

struct IncrementSet {
  std::string source_problem;
  std::string target_problem;
  char axis = 's';
  IncrementKind kind = IncrementKind::knowledge;
  std::vector<std::string> member_ids;
};

/// No corpus problem isolates the new knowledge or modality.
class IncrementDataGap : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// The single axis on which two coordinates differ; nullopt when they differ
/// on zero or several axes.
inline std::optional<char> transition_axis(const DifficultyCoordinate& from, const DifficultyCoordinate& to) {
  std::vector<char> diff;
  if (from.s != to.s) diff.push_back('s');
  if (from.v != to.v) diff.push_back('v');
  if (from.c != to.c) diff.push_back('c');
  if (diff.size() != 1) return std::nullopt;
  return diff.front();
}

/// Knowledge increments: standard problems whose step points include at least
/// one point new in `next` and nothing outside source points + new points.
/// Modality increments: non-lattice problems at the source coordinate with only
/// the new axis applied and the same knowledge point set as the source.
inline IncrementSet build_increment(const CurriculumNode& source, const CurriculumNode& next, const Corpus& corpus) {
  const auto axis = transition_axis(source.coordinate, next.coordinate);
  if (!axis) {
    throw ValidationError("build_increment: " + source.coordinate.to_string() + " -> " + next.coordinate.to_string() +
                          " must differ on exactly one axis");
  }
  const Problem& src = corpus.at(source.problem_id);
  const Problem& dst = corpus.at(next.problem_id);
  IncrementSet inc;
  inc.source_problem = src.id;
  inc.target_problem = dst.id;
  inc.axis = *axis;
  const std::set<std::string> src_points(src.annotation.step_points.begin(), src.annotation.step_points.end());

  if (*axis == 's') {
    inc.kind = IncrementKind::knowledge;
    std::set<std::string> fresh;
    for (const auto& k : dst.annotation.step_points) {
      if (src_points.count(k) == 0) fresh.insert(k);
    }
    for (const auto* p : corpus.standard_problems()) {
      bool touches_new = false;
      bool isolated = true;
      for (const auto& k : p->annotation.step_points) {
        if (fresh.count(k) != 0) {
          touches_new = true;
        } else if (src_points.count(k) == 0) {
          isolated = false;
        }
      }
      if (touches_new && isolated) inc.member_ids.push_back(p->id);
    }
  } else {
    inc.kind = IncrementKind::modality;
    DifficultyCoordinate want = src.difficulty;
    (*axis == 'v' ? want.v : want.c) = true;
    for (const auto* p : corpus.by_coordinate(want)) {
      if (corpus.is_lattice_node(p->id)) continue;
      const std::set<std::string> pts(p->annotation.step_points.begin(), p->annotation.step_points.end());
      if (pts == src_points) inc.member_ids.push_back(p->id);
    }
  }
  if (inc.member_ids.empty()) {
    throw IncrementDataGap("no increment problems for " + src.id + " -> " + dst.id + " on axis " +
                           std::string(1, *axis));
  }
  return inc;
}

// ---------------------------------------------------------------------------
// Node evaluation

struct SchedulerConfig {
  double pass_threshold = 0.5;
  int max_reattempts = 2;
  int increment_steps = 20;
  /// Lattices advanced round-robin together; 1 = one lattice at a time.
  int lattice_batch = 1;

  void validate() const {
    if (!(pass_threshold > 0.0 && pass_threshold <= 1.0)) throw ValidationError("scheduler: pass_threshold in (0,1]");
    if (max_reattempts < 1) throw ValidationError("scheduler: max_reattempts must be >= 1");
    if (increment_steps < 0) throw ValidationError("scheduler: increment_steps must be >= 0");
    if (lattice_batch < 1) throw ValidationError("scheduler: lattice_batch must be >= 1");
  }
};

struct NodeEvaluation {
  bool passed = false;
  int correct = 0;
  int total = 0;
  std::vector<double> rewards;
};

/// Passed iff the fraction of rollouts scoring the correct value reaches the threshold.
inline NodeEvaluation evaluate_rewards(std::vector<double> rewards, double correct_value, double pass_threshold) {
  NodeEvaluation e;
  e.total = static_cast<int>(rewards.size());
  e.correct = static_cast<int>(std::count_if(rewards.begin(), rewards.end(),
                                             [&](double r) { return r >= correct_value; }));
  e.passed = e.total > 0 && static_cast<double>(e.correct) >= pass_threshold * static_cast<double>(e.total);
  e.rewards = std::move(rewards);
  return e;
}

// ---------------------------------------------------------------------------
// Trace

enum class EventType { attempt, pass, fail, increment, reattempt, unresolved };

inline std::string_view to_string(EventType e) {
  switch (e) {
    case EventType::attempt: return "attempt";
    case EventType::pass: return "pass";
    case EventType::fail: return "fail";
    case EventType::increment: return "increment";
    case EventType::reattempt: return "reattempt";
    case EventType::unresolved: return "unresolved";
  }
  return "attempt";
}

inline EventType parse_event_type(std::string_view s) {
  for (auto e : {EventType::attempt, EventType::pass, EventType::fail, EventType::increment, EventType::reattempt,
                 EventType::unresolved}) {
    if (to_string(e) == s) return e;
  }
  throw ValidationError("unknown trace event '" + std::string(s) + "'");
}

struct TraceEvent {
  std::string lattice;
  std::string coordinate;  // lattice axis key
  EventType event = EventType::attempt;
  long step = 0;           // cumulative increment training steps so far
  std::string detail;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;

  json to_json() const {
    return {{"lattice", lattice}, {"coordinate", coordinate}, {"event", to_string(event)},
            {"step", step}, {"detail", detail}};
  }

  static TraceEvent from_json(const json& j) {
    return {require_field<std::string>(j, "lattice", "trace event"),
            require_field<std::string>(j, "coordinate", "trace event"),
            parse_event_type(require_field<std::string>(j, "event", "trace event")),
            require_field<long>(j, "step", "trace event"), j.value("detail", std::string{})};
  }
};

struct CurriculumTrace {
  std::vector<TraceEvent> events;
  std::map<std::string, std::vector<CurriculumNode>> nodes;  // final node states per lattice
  std::map<char, int> increments_by_axis;
  std::vector<std::string> data_gaps;

  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : events) out += e.to_json().dump() + "\n";
    return out;
  }
};

/// Outcome source: called once per attempt of a node (attempt 0 = first try).
using NodeEvaluator = std::function<NodeEvaluation(const CurriculumNode& node, int attempt)>;
/// Trains on an increment set for `steps` steps; may throw RuntimeAbort.
using IncrementTrainer = std::function<void(const IncrementSet& inc, int steps)>;

namespace detail {

class LatticeMachine {
 public:
  LatticeMachine(std::vector<CurriculumNode> nodes, const Corpus& corpus, const SchedulerConfig& cfg)
      : nodes_(std::move(nodes)), corpus_(&corpus), cfg_(&cfg) {}

  bool done() const { return index_ >= nodes_.size(); }
  const std::vector<CurriculumNode>& nodes() const { return nodes_; }

  /// One attempt at the current node, plus the increment or terminal event it triggers.
  void advance(const NodeEvaluator& evaluate, const IncrementTrainer& train, CurriculumTrace& trace,
               long& training_steps) {
    CurriculumNode& node = nodes_[index_];
    const auto emit = [&](EventType type, std::string detail) {
      trace.events.push_back({node.lattice_id, node.key, type, training_steps, std::move(detail)});
    };
    emit(attempts_ == 0 ? EventType::attempt : EventType::reattempt, node.problem_id);
    const NodeEvaluation eval = evaluate(node, attempts_);
    ++attempts_;
    const std::string score = std::to_string(eval.correct) + "/" + std::to_string(eval.total);
    if (eval.passed) {
      node.status = NodeStatus::passed;
      emit(EventType::pass, score);
      next_node();
      return;
    }
    node.status = NodeStatus::failed;
    emit(EventType::fail, score);
    if (attempts_ - 1 >= cfg_->max_reattempts) {
      node.status = NodeStatus::unresolved;
      emit(EventType::unresolved, "reattempts exhausted");
      next_node();
      return;
    }
    const int src = kTransitionSource[index_];
    if (src < 0 || nodes_[static_cast<std::size_t>(src)].status != NodeStatus::passed) return;
    try {
      const IncrementSet inc = build_increment(nodes_[static_cast<std::size_t>(src)], node, *corpus_);
      std::string detail = "axis=" + std::string(1, inc.axis) + " kind=" + std::string(to_string(inc.kind)) +
                           " size=" + std::to_string(inc.member_ids.size());
      emit(EventType::increment, std::move(detail));
      ++trace.increments_by_axis[inc.axis];
      if (train) train(inc, cfg_->increment_steps);
      training_steps += cfg_->increment_steps;
    } catch (const IncrementDataGap& gap) {
      trace.data_gaps.emplace_back(gap.what());
      emit(EventType::increment, std::string("data gap: ") + gap.what());
    }
  }

 private:
  void next_node() {
    ++index_;
    attempts_ = 0;
  }

  std::vector<CurriculumNode> nodes_;
  const Corpus* corpus_;
  const SchedulerConfig* cfg_;
  std::size_t index_ = 0;
  int attempts_ = 0;
};

}  // namespace detail

/// Walks every lattice along its main path. A failure right after a passed
/// transition source triggers an increment set and a reattempt; a node is
/// marked unresolved once its reattempts are used up. Lattices are processed
/// in batches of `lattice_batch`, one attempt per lattice per turn.
inline CurriculumTrace run_curriculum(std::span<const DifficultyLattice> lattices, const Corpus& corpus,
                                      const NodeEvaluator& evaluate, const IncrementTrainer& train,
                                      const SchedulerConfig& cfg) {
  cfg.validate();
  CurriculumTrace trace;
  long training_steps = 0;
  const auto batch = static_cast<std::size_t>(cfg.lattice_batch);
  for (std::size_t begin = 0; begin < lattices.size(); begin += batch) {
    std::vector<detail::LatticeMachine> machines;
    for (std::size_t i = begin; i < std::min(lattices.size(), begin + batch); ++i) {
      machines.emplace_back(trajectory(lattices[i], corpus), corpus, cfg);
    }
    bool active = true;
    while (active) {
      active = false;
      for (auto& m : machines) {
        if (m.done()) continue;
        m.advance(evaluate, train, trace, training_steps);
        active = true;
      }
    }
    for (std::size_t i = 0; i < machines.size(); ++i) {
      trace.nodes[lattices[begin + i].seed_id] = machines[i].nodes();
    }
  }
  return trace;
}

/// Re-runs the state machine with the pass/fail outcomes recorded in `trace`.
inline CurriculumTrace replay_trace(const CurriculumTrace& trace, std::span<const DifficultyLattice> lattices,
                                    const Corpus& corpus, const SchedulerConfig& cfg) {
  std::map<std::pair<std::string, std::string>, std::vector<NodeEvaluation>> outcomes;
  for (const auto& e : trace.events) {
    if (e.event != EventType::pass && e.event != EventType::fail) continue;
    NodeEvaluation ev;
    ev.passed = e.event == EventType::pass;
    const auto slash = e.detail.find('/');
    if (slash != std::string::npos) {
      ev.correct = std::stoi(e.detail.substr(0, slash));
      ev.total = std::stoi(e.detail.substr(slash + 1));
    }
    outcomes[{e.lattice, e.coordinate}].push_back(ev);
  }
  const NodeEvaluator evaluate = [&](const CurriculumNode& node, int attempt) {
    const auto& list = outcomes[{node.lattice_id, node.key}];
    if (attempt >= static_cast<int>(list.size())) {
      throw ValidationError("replay: trace has no outcome for " + node.lattice_id + "/" + node.key);
    }
    return list[static_cast<std::size_t>(attempt)];
  };
  return run_curriculum(lattices, corpus, evaluate, IncrementTrainer{}, cfg);
}

}  // namespace mathbook
