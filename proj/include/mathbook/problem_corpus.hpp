#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/knowledge_store.hpp"

namespace mathbook {

/// Position in the (step, visual, contextual) difficulty space. `s` is a rank
/// so that multi-step deepening chains can be represented.
struct DifficultyCoordinate {
  int s = 0;
  bool v = false;
  bool c = false;

  friend auto operator<=>(const DifficultyCoordinate&, const DifficultyCoordinate&) = default;
  friend bool operator==(const DifficultyCoordinate&, const DifficultyCoordinate&) = default;

  bool is_seed() const { return s == 0 && !v && !c; }

  /// Applied-axis key: "seed", "s", "v", "c", "sv", "sc", "vc" or "svc".
  std::string axis_key() const {
    std::string k;
    if (s > 0) k += 's';
    if (v) k += 'v';
    if (c) k += 'c';
    return k.empty() ? "seed" : k;
  }

  std::string to_string() const {
    return "(" + std::to_string(s) + "," + (v ? "true" : "false") + "," + (c ? "true" : "false") + ")";
  }
};

/// The eight corners of the difficulty cube, seed first.
inline const std::array<std::string, 8>& lattice_keys() {
  static const std::array<std::string, 8> keys = {"seed", "s", "v", "c", "sv", "sc", "vc", "svc"};
  return keys;
}

inline bool is_lattice_key(std::string_view key) {
  const auto& keys = lattice_keys();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

struct Problem {
  std::string id;
  std::string seed_id;
  std::string question;
  std::string answer;
  std::optional<std::string> image_ref;
  std::optional<std::string> ggb_ref;
  KnowledgeAnnotation annotation;
  DifficultyCoordinate difficulty;
  int knowledge_count = 0;
  /// Step-decomposed solution text; only needed for re-annotation.
  std::vector<std::string> solution_steps;

  friend bool operator==(const Problem&, const Problem&) = default;
};

enum class VariantKind { image_variant, question_variant };

inline std::string_view to_string(VariantKind k) {
  return k == VariantKind::image_variant ? "image_variant" : "question_variant";
}

struct VariantGroup {
  VariantKind kind = VariantKind::image_variant;
  std::string principle_id;
  std::vector<std::string> member_ids;

  friend bool operator==(const VariantGroup&, const VariantGroup&) = default;
};

struct DifficultyLattice {
  std::string seed_id;
  std::map<std::string, std::string> nodes;  // axis key -> problem id

  friend bool operator==(const DifficultyLattice&, const DifficultyLattice&) = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline json to_json(const Problem& p) {
  json j = {{"id", p.id},
            {"seed_id", p.seed_id},
            {"question", p.question},
            {"answer", p.answer}};
  if (p.image_ref) j["image_ref"] = *p.image_ref;
  if (p.ggb_ref) j["ggb_ref"] = *p.ggb_ref;
  j["annotation"] = {{"step_points", p.annotation.step_points},
                     {"principle_ids", p.annotation.principle_ids}};
  j["difficulty"] = {{"s", p.difficulty.s}, {"v", p.difficulty.v}, {"c", p.difficulty.c}};
  j["knowledge_count"] = p.knowledge_count;
  if (!p.solution_steps.empty()) j["solution_steps"] = p.solution_steps;
  return j;
}

inline Problem problem_from_json(const json& j) {
  Problem p;
  p.id = require_field<std::string>(j, "id", "problem");
  const std::string where = "problem '" + p.id + "'";
  p.seed_id = require_field<std::string>(j, "seed_id", where);
  p.question = require_field<std::string>(j, "question", where);
  p.answer = require_field<std::string>(j, "answer", where);
  if (j.contains("image_ref") && !j.at("image_ref").is_null()) p.image_ref = j.at("image_ref").get<std::string>();
  if (j.contains("ggb_ref") && !j.at("ggb_ref").is_null()) p.ggb_ref = j.at("ggb_ref").get<std::string>();
  const auto ann = require_field<json>(j, "annotation", where);
  p.annotation.problem_id = p.id;
  p.annotation.step_points = require_field<std::vector<std::string>>(ann, "step_points", where + " annotation");
  p.annotation.principle_ids = ann.value("principle_ids", std::vector<std::string>{});
  const auto diff = require_field<json>(j, "difficulty", where);
  p.difficulty.s = require_field<int>(diff, "s", where + " difficulty");
  p.difficulty.v = require_field<bool>(diff, "v", where + " difficulty");
  p.difficulty.c = require_field<bool>(diff, "c", where + " difficulty");
  p.knowledge_count = require_field<int>(j, "knowledge_count", where);
  p.solution_steps = j.value("solution_steps", std::vector<std::string>{});
  return p;
}

inline json to_json(const VariantGroup& g) {
  return {{"kind", to_string(g.kind)}, {"principle_id", g.principle_id}, {"member_ids", g.member_ids}};
}

inline VariantGroup group_from_json(const json& j) {
  VariantGroup g;
  const auto kind = require_field<std::string>(j, "kind", "variant group");
  if (kind == "image_variant") {
    g.kind = VariantKind::image_variant;
  } else if (kind == "question_variant") {
    g.kind = VariantKind::question_variant;
  } else {
    throw ValidationError("variant group: unknown kind '" + kind + "'");
  }
  g.principle_id = require_field<std::string>(j, "principle_id", "variant group");
  g.member_ids = require_field<std::vector<std::string>>(j, "member_ids", "variant group");
  return g;
}

inline json to_json(const DifficultyLattice& l) {
  return {{"seed_id", l.seed_id}, {"nodes", l.nodes}};
}

inline DifficultyLattice lattice_from_json(const json& j) {
  DifficultyLattice l;
  l.seed_id = require_field<std::string>(j, "seed_id", "lattice");
  l.nodes = require_field<std::map<std::string, std::string>>(j, "nodes", "lattice '" + l.seed_id + "'");
  return l;
}

// ---------------------------------------------------------------------------
// Corpus

struct CorpusStats {
  std::size_t problems = 0;
  std::size_t seeds = 0;
  std::size_t image_variant_groups = 0;
  std::size_t question_variant_groups = 0;
  std::size_t lattices = 0;
  std::size_t knowledge_points_covered = 0;
  std::size_t principles_covered = 0;
  std::map<std::string, std::size_t> per_axis_key;

  json to_json() const {
    return {{"problems", problems},
            {"seeds", seeds},
            {"image_variant_groups", image_variant_groups},
            {"question_variant_groups", question_variant_groups},
            {"lattices", lattices},
            {"knowledge_points_covered", knowledge_points_covered},
            {"principles_covered", principles_covered},
            {"per_axis_key", per_axis_key}};
  }
};

/// Immutable, validated problem set with lookup indexes.
class Corpus {
 public:
  Corpus() = default;

  /// Validates everything against `store`; throws ValidationError on the first
  /// dangling id, malformed group or structurally broken lattice.
  Corpus(std::vector<Problem> problems, std::vector<VariantGroup> groups,
         std::vector<DifficultyLattice> lattices, const KnowledgeHierarchy& store)
      : problems_(std::move(problems)), groups_(std::move(groups)), lattices_(std::move(lattices)) {
    build_and_validate(store);
  }

  const std::vector<Problem>& problems() const { return problems_; }
  const std::vector<VariantGroup>& groups() const { return groups_; }
  const std::vector<DifficultyLattice>& lattices() const { return lattices_; }
  bool empty() const { return problems_.empty(); }

  const Problem* find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &problems_[it->second];
  }

  const Problem& at(std::string_view id) const {
    const auto* p = find(id);
    if (p == nullptr) throw ValidationError("unknown problem '" + std::string(id) + "'");
    return *p;
  }

  std::vector<const Problem*> by_point(std::string_view point_id) const {
    return collect(by_point_, point_id);
  }
  std::vector<const Problem*> by_principle(std::string_view principle_id) const {
    return collect(by_principle_, principle_id);
  }
  std::vector<const Problem*> by_coordinate(const DifficultyCoordinate& coord) const {
    std::vector<const Problem*> out;
    auto it = by_coordinate_.find(coord);
    if (it != by_coordinate_.end()) {
      for (auto i : it->second) out.push_back(&problems_[i]);
    }
    return out;
  }

  std::size_t point_index_size() const { return by_point_.size(); }
  std::size_t principle_index_size() const { return by_principle_.size(); }
  std::size_t coordinate_index_size() const { return by_coordinate_.size(); }

  /// True when the problem is a corner of some difficulty lattice.
  bool is_lattice_node(std::string_view id) const { return lattice_nodes_.count(std::string(id)) != 0; }

  /// Problems outside every lattice at the seed coordinate.
  std::vector<const Problem*> standard_problems() const {
    std::vector<const Problem*> out;
    for (const auto& p : problems_) {
      if (p.difficulty.is_seed() && !is_lattice_node(p.id)) out.push_back(&p);
    }
    return out;
  }

  CorpusStats stats() const {
    CorpusStats s;
    s.problems = problems_.size();
    for (const auto& p : problems_) {
      if (p.id == p.seed_id) ++s.seeds;
      ++s.per_axis_key[p.difficulty.axis_key()];
    }
    for (const auto& g : groups_) {
      (g.kind == VariantKind::image_variant ? s.image_variant_groups : s.question_variant_groups)++;
    }
    s.lattices = lattices_.size();
    s.knowledge_points_covered = by_point_.size();
    s.principles_covered = by_principle_.size();
    return s;
  }

  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::string lines;
    for (const auto& p : problems_) lines += to_json(p).dump() + "\n";
    write_text_file(dir / "problems.jsonl", lines);
    json groups = json::array();
    for (const auto& g : groups_) groups.push_back(to_json(g));
    write_text_file(dir / "groups.json", groups.dump(2) + "\n");
    json lattices = json::array();
    for (const auto& l : lattices_) lattices.push_back(to_json(l));
    write_text_file(dir / "lattices.json", lattices.dump(2) + "\n");
  }

 private:
  template <typename Index>
  std::vector<const Problem*> collect(const Index& index, std::string_view key) const {
    std::vector<const Problem*> out;
    auto it = index.find(std::string(key));
    if (it != index.end()) {
      for (auto i : it->second) out.push_back(&problems_[i]);
    }
    return out;
  }

  void build_and_validate(const KnowledgeHierarchy& store) {
    for (std::size_t i = 0; i < problems_.size(); ++i) {
      auto& p = problems_[i];
      const std::string where = "problem '" + p.id + "'";
      if (p.id.empty()) throw ValidationError("problem with empty id");
      if (!by_id_.emplace(p.id, i).second) throw ValidationError(where + ": duplicate id");
      if (p.answer.empty()) throw ValidationError(where + ": empty answer");
      p.annotation.problem_id = p.id;
      validate_annotation(p.annotation, store);
      if (p.knowledge_count <= 0 ||
          static_cast<std::size_t>(p.knowledge_count) != p.annotation.step_points.size()) {
        throw ValidationError(where + ": knowledge_count " + std::to_string(p.knowledge_count) +
                              " != step point count " + std::to_string(p.annotation.step_points.size()));
      }
      if (p.difficulty.s < 0) throw ValidationError(where + ": negative step rank");
      if (p.id == p.seed_id && !p.difficulty.is_seed()) {
        throw ValidationError(where + ": seed problem must sit at (0,false,false)");
      }
    }
    for (std::size_t i = 0; i < problems_.size(); ++i) {
      const auto& p = problems_[i];
      if (by_id_.count(p.seed_id) == 0) {
        throw ValidationError("problem '" + p.id + "': dangling seed id '" + p.seed_id + "'");
      }
      std::set<std::string> seen;
      for (const auto& k : p.annotation.step_points) {
        if (seen.insert(k).second) by_point_[k].push_back(i);
      }
      for (const auto& pr : std::set<std::string>(p.annotation.principle_ids.begin(),
                                                  p.annotation.principle_ids.end())) {
        by_principle_[pr].push_back(i);
      }
      by_coordinate_[p.difficulty].push_back(i);
    }
    for (const auto& g : groups_) validate_group(g, store);
    std::set<std::string> lattice_seeds;
    for (const auto& l : lattices_) {
      validate_lattice_structure(l);
      if (!lattice_seeds.insert(l.seed_id).second) {
        throw ValidationError("lattice '" + l.seed_id + "': duplicate lattice for seed");
      }
      for (const auto& [key, id] : l.nodes) lattice_nodes_.insert(id);
    }
  }

  void validate_group(const VariantGroup& g, const KnowledgeHierarchy& store) const {
    const std::string where = std::string(to_string(g.kind)) + " group for '" + g.principle_id + "'";
    if (store.find_principle(g.principle_id) == nullptr) {
      throw ValidationError(where + ": unknown principle");
    }
    if (g.member_ids.size() < 2) throw ValidationError(where + ": needs at least 2 members");
    if (std::set<std::string>(g.member_ids.begin(), g.member_ids.end()).size() != g.member_ids.size()) {
      throw ValidationError(where + ": duplicate member");
    }
    std::vector<const Problem*> members;
    for (const auto& id : g.member_ids) {
      const auto* p = find(id);
      if (p == nullptr) throw ValidationError(where + ": dangling member '" + id + "'");
      members.push_back(p);
    }
    if (g.kind == VariantKind::image_variant) {
      std::set<std::optional<std::string>> images;
      for (const auto* p : members) {
        if (p->question != members.front()->question) {
          throw ValidationError(where + ": member '" + p->id + "' has a different question text");
        }
        images.insert(p->image_ref);
      }
      if (images.size() != members.size()) throw ValidationError(where + ": members must differ in image_ref");
    } else {
      std::set<std::string> questions;
      for (const auto* p : members) {
        if (!p->image_ref || p->image_ref != members.front()->image_ref) {
          throw ValidationError(where + ": member '" + p->id + "' does not share the group image");
        }
        questions.insert(p->question);
      }
      if (questions.size() != members.size()) throw ValidationError(where + ": members must differ in question");
    }
  }

  void validate_lattice_structure(const DifficultyLattice& l) const {
    const std::string where = "lattice '" + l.seed_id + "'";
    for (const auto& key : lattice_keys()) {
      if (l.nodes.count(key) == 0) throw ValidationError(where + ": missing coordinate {" + key + "}");
    }
    for (const auto& [key, id] : l.nodes) {
      if (!is_lattice_key(key)) throw ValidationError(where + ": unknown coordinate {" + key + "}");
      if (find(id) == nullptr) throw ValidationError(where + ": dangling node '" + id + "' at {" + key + "}");
    }
  }

  std::vector<Problem> problems_;
  std::vector<VariantGroup> groups_;
  std::vector<DifficultyLattice> lattices_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::vector<std::size_t>> by_point_;
  std::map<std::string, std::vector<std::size_t>> by_principle_;
  std::map<DifficultyCoordinate, std::vector<std::size_t>> by_coordinate_;
  std::set<std::string> lattice_nodes_;
};

/// Reads problems.jsonl plus the optional groups.json / lattices.json sidecars.
inline Corpus ingest_corpus(const std::filesystem::path& dir, const KnowledgeHierarchy& store) {
  std::vector<Problem> problems;
  for (const auto& row : read_json_lines(dir / "problems.jsonl")) problems.push_back(problem_from_json(row));
  std::vector<VariantGroup> groups;
  if (std::filesystem::exists(dir / "groups.json")) {
    for (const auto& g : read_json_file(dir / "groups.json")) groups.push_back(group_from_json(g));
  }
  std::vector<DifficultyLattice> lattices;
  if (std::filesystem::exists(dir / "lattices.json")) {
    for (const auto& l : read_json_file(dir / "lattices.json")) lattices.push_back(lattice_from_json(l));
  }
  return Corpus(std::move(problems), std::move(groups), std::move(lattices), store);
}

// ---------------------------------------------------------------------------
// Lattice validation

inline constexpr std::string_view kRuleCube = "8-node cube";
inline constexpr std::string_view kRuleCoordinates = "coordinate consistency";
inline constexpr std::string_view kRuleStepIncrement = "step increment";
inline constexpr std::string_view kRuleMinComplexity = "minimum complexity";
inline constexpr int kMinHardestKnowledgePoints = 6;

struct RuleResult {
  std::string rule;
  bool passed = false;
  std::string detail;
};

struct LatticeReport {
  std::string seed_id;
  std::vector<RuleResult> rules;

  bool passed() const {
    return std::all_of(rules.begin(), rules.end(), [](const RuleResult& r) { return r.passed; });
  }

  const RuleResult* first_failure() const {
    for (const auto& r : rules) {
      if (!r.passed) return &r;
    }
    return nullptr;
  }

  const RuleResult* rule(std::string_view name) const {
    for (const auto& r : rules) {
      if (r.rule == name) return &r;
    }
    return nullptr;
  }

  json to_json() const {
    json rs = json::array();
    for (const auto& r : rules) rs.push_back({{"rule", r.rule}, {"passed", r.passed}, {"detail", r.detail}});
    return {{"seed_id", seed_id}, {"passed", passed()}, {"rules", rs}};
  }
};

/// Step-axis chain of a lattice: the seed, intermediate deepening variants
/// (same seed, coordinate (r,false,false) for 0<r<R) and the s corner.
/// Empty when the seed or s corner is missing.
inline std::vector<const Problem*> step_chain(const DifficultyLattice& lattice, const Corpus& corpus) {
  auto seed_it = lattice.nodes.find("seed");
  auto s_it = lattice.nodes.find("s");
  if (seed_it == lattice.nodes.end() || s_it == lattice.nodes.end()) return {};
  const Problem* seed = corpus.find(seed_it->second);
  const Problem* top = corpus.find(s_it->second);
  if (seed == nullptr || top == nullptr) return {};
  std::vector<const Problem*> chain{seed};
  for (int r = 1; r < top->difficulty.s; ++r) {
    const Problem* pick = nullptr;
    for (const auto* p : corpus.by_coordinate({r, false, false})) {
      if (p->seed_id == lattice.seed_id && (pick == nullptr || p->id < pick->id)) pick = p;
    }
    if (pick != nullptr) chain.push_back(pick);
  }
  chain.push_back(top);
  return chain;
}

/// Report-carrying check of the cube shape, coordinates, step-increment rule
/// and the minimum knowledge-point count of the hardest corner.
inline LatticeReport validate_lattice(const DifficultyLattice& lattice, const Corpus& corpus) {
  LatticeReport report;
  report.seed_id = lattice.seed_id;

  std::string cube_detail;
  for (const auto& key : lattice_keys()) {
    auto it = lattice.nodes.find(key);
    if (it == lattice.nodes.end()) {
      cube_detail += "missing {" + key + "}; ";
    } else if (corpus.find(it->second) == nullptr) {
      cube_detail += "unknown problem at {" + key + "}; ";
    }
  }
  for (const auto& [key, id] : lattice.nodes) {
    if (!is_lattice_key(key)) cube_detail += "unexpected key {" + key + "}; ";
  }
  const bool cube_ok = cube_detail.empty();
  report.rules.push_back({std::string(kRuleCube), cube_ok, cube_ok ? "8 nodes" : cube_detail});
  if (!cube_ok) {
    for (auto rule : {kRuleCoordinates, kRuleStepIncrement, kRuleMinComplexity}) {
      report.rules.push_back({std::string(rule), false, "not evaluated: cube incomplete"});
    }
    return report;
  }

  const Problem& s_corner = corpus.at(lattice.nodes.at("s"));
  std::string coord_detail;
  for (const auto& [key, id] : lattice.nodes) {
    const Problem& p = corpus.at(id);
    const std::string axes = key == "seed" ? "" : key;
    const bool want_s = axes.find('s') != std::string::npos;
    const bool want_v = axes.find('v') != std::string::npos;
    const bool want_c = axes.find('c') != std::string::npos;
    const auto& d = p.difficulty;
    if (p.seed_id != lattice.seed_id) coord_detail += "{" + key + "} belongs to seed '" + p.seed_id + "'; ";
    if ((d.s > 0) != want_s || d.v != want_v || d.c != want_c) {
      coord_detail += "{" + key + "} has coordinate " + d.to_string() + "; ";
    } else if (want_s && d.s != s_corner.difficulty.s) {
      coord_detail += "{" + key + "} step rank " + std::to_string(d.s) + " != s corner rank " +
                      std::to_string(s_corner.difficulty.s) + "; ";
    }
  }
  if (lattice.nodes.at("seed") != lattice.seed_id) coord_detail += "seed node is not the seed problem; ";
  report.rules.push_back({std::string(kRuleCoordinates), coord_detail.empty(),
                          coord_detail.empty() ? "ok" : coord_detail});

  const auto chain = step_chain(lattice, corpus);
  std::string step_detail;
  std::string counts;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    counts += (i ? "," : "") + std::to_string(chain[i]->knowledge_count);
    if (chain[i]->difficulty.s != static_cast<int>(i)) {
      step_detail = "missing step rank " + std::to_string(i);
      break;
    }
    if (i > 0 && chain[i]->knowledge_count != chain[i - 1]->knowledge_count + 1) {
      step_detail = "step increment != 1 between ranks " + std::to_string(i - 1) + " and " + std::to_string(i);
      break;
    }
  }
  report.rules.push_back({std::string(kRuleStepIncrement), step_detail.empty(),
                          "chain [" + counts + "]" + (step_detail.empty() ? "" : ": " + step_detail)});

  const Problem& hardest = corpus.at(lattice.nodes.at("svc"));
  const bool hard_ok = hardest.knowledge_count >= kMinHardestKnowledgePoints;
  report.rules.push_back({std::string(kRuleMinComplexity), hard_ok,
                          "{svc} has " + std::to_string(hardest.knowledge_count) + " knowledge points (need >= " +
                              std::to_string(kMinHardestKnowledgePoints) + ")"});
  return report;
}

// ---------------------------------------------------------------------------

struct PrincipleGroup {
  std::string principle_id;
  std::vector<std::string> member_ids;
};

/// Image-variant groups keyed by principle; groups sharing a principle are
/// merged (first-seen member order). Ordered by principle id.
inline std::vector<PrincipleGroup> principle_groups(const Corpus& corpus) {
  std::map<std::string, std::vector<std::string>> merged;
  for (const auto& g : corpus.groups()) {
    if (g.kind != VariantKind::image_variant) continue;
    auto& members = merged[g.principle_id];
    for (const auto& id : g.member_ids) {
      if (std::find(members.begin(), members.end(), id) == members.end()) members.push_back(id);
    }
  }
  std::vector<PrincipleGroup> out;
  for (auto& [pid, members] : merged) out.push_back({pid, std::move(members)});
  return out;
}

/// Re-tags a problem's solution steps with `tagger`.
inline KnowledgeAnnotation annotate_problem(const Problem& problem, const StepTagger& tagger,
                                            const KnowledgeHierarchy& store) {
  auto a = annotate_steps(problem.id, problem.solution_steps, tagger, store);
  a.principle_ids = problem.annotation.principle_ids;
  return a;
}

}  // namespace mathbook
