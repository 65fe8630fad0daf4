#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"

namespace mathbook {

inline constexpr int kHierarchyDepth = 5;
inline constexpr std::size_t kMinPrinciplesPerLeaf = 1;
inline constexpr std::size_t kMaxPrinciplesPerLeaf = 7;

enum class PrincipleKind { definition, theorem, application };

inline std::string_view to_string(PrincipleKind k) {
  switch (k) {
    case PrincipleKind::definition: return "definition";
    case PrincipleKind::theorem: return "theorem";
    case PrincipleKind::application: return "application";
  }
  return "definition";
}

inline std::optional<PrincipleKind> parse_principle_kind(std::string_view s) {
  if (s == "definition") return PrincipleKind::definition;
  if (s == "theorem") return PrincipleKind::theorem;
  if (s == "application") return PrincipleKind::application;
  return std::nullopt;
}

struct KnowledgePoint {
  std::string id;
  std::string name;
  int level = 1;
  std::optional<std::string> parent_id;
  std::vector<std::string> principle_ids;
  std::vector<std::string> child_ids;
};

struct Principle {
  std::string id;
  std::string owner_point;
  PrincipleKind kind = PrincipleKind::definition;
  std::string statement;
};

/// Step-level knowledge path of one problem (the problem -> leaves mapping).
struct KnowledgeAnnotation {
  std::string problem_id;
  std::vector<std::string> step_points;
  std::vector<std::string> principle_ids;

  friend bool operator==(const KnowledgeAnnotation&, const KnowledgeAnnotation&) = default;
};

struct HierarchyLoadOptions {
  /// Totals that are only checked as warnings; the published figures disagree
  /// with each other for principles, so neither is enforced.
  std::optional<std::size_t> expected_leaves;
  std::optional<std::size_t> expected_principles;
};

/// Immutable five-level knowledge tree. Leaves (level 5) own 1..7 principles.
class KnowledgeHierarchy {
 public:
  KnowledgeHierarchy() = default;

  static KnowledgeHierarchy from_json(const json& doc, const HierarchyLoadOptions& opts = {}) {
    KnowledgeHierarchy h;
    if (doc.is_array()) {
      for (const auto& root : doc) h.add_subtree(root, std::nullopt, 1);
    } else if (doc.is_object() && doc.contains("roots")) {
      for (const auto& root : doc.at("roots")) h.add_subtree(root, std::nullopt, 1);
    } else if (doc.is_object()) {
      h.add_subtree(doc, std::nullopt, 1);
    } else {
      throw ValidationError("hierarchy: expected an object or array of root nodes");
    }
    h.check_totals(opts);
    return h;
  }

  const std::vector<KnowledgePoint>& points() const { return points_; }
  const std::vector<Principle>& principles() const { return principles_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::vector<std::string>& root_ids() const { return roots_; }

  std::size_t leaf_count() const { return leaf_count_; }
  std::size_t principle_count() const { return principles_.size(); }

  const KnowledgePoint* find_point(std::string_view id) const {
    auto it = point_index_.find(std::string(id));
    return it == point_index_.end() ? nullptr : &points_[it->second];
  }

  const Principle* find_principle(std::string_view id) const {
    auto it = principle_index_.find(std::string(id));
    return it == principle_index_.end() ? nullptr : &principles_[it->second];
  }

  bool is_leaf(std::string_view id) const {
    const auto* p = find_point(id);
    return p != nullptr && p->level == kHierarchyDepth;
  }

  /// Ancestor of `id` at `level` (the point itself when its level matches).
  const KnowledgePoint* ancestor_at(std::string_view id, int level) const {
    const KnowledgePoint* p = find_point(id);
    while (p != nullptr && p->level > level) {
      p = p->parent_id ? find_point(*p->parent_id) : nullptr;
    }
    return (p != nullptr && p->level == level) ? p : nullptr;
  }

  std::vector<const KnowledgePoint*> leaves() const {
    std::vector<const KnowledgePoint*> out;
    for (const auto& p : points_) {
      if (p.level == kHierarchyDepth) out.push_back(&p);
    }
    return out;
  }

  json to_json() const {
    json roots = json::array();
    for (const auto& r : roots_) roots.push_back(subtree_json(r));
    return roots;
  }

 private:
  void add_subtree(const json& node, const std::optional<std::string>& parent, int expected_level) {
    const std::string ctx = "hierarchy node";
    const auto id = require_field<std::string>(node, "id", ctx);
    const std::string where = "hierarchy node '" + id + "'";
    if (point_index_.count(id) != 0) throw ValidationError(where + ": duplicate id");
    KnowledgePoint kp;
    kp.id = id;
    kp.name = require_field<std::string>(node, "name", where);
    kp.level = require_field<int>(node, "level", where);
    kp.parent_id = parent;
    if (kp.level < 1 || kp.level > kHierarchyDepth) {
      throw ValidationError(where + ": level " + std::to_string(kp.level) + " out of [1,5]");
    }
    if (kp.level != expected_level) {
      throw ValidationError(where + ": level " + std::to_string(kp.level) +
                            " does not equal parent level + 1 (" +
                            std::to_string(expected_level) + ")");
    }

    const json empty = json::array();
    const json& principles = node.contains("principles") ? node.at("principles") : empty;
    const json& children = node.contains("children") ? node.at("children") : empty;
    if (!principles.is_array() || !children.is_array()) {
      throw ValidationError(where + ": 'principles' and 'children' must be arrays");
    }

    if (kp.level == kHierarchyDepth) {
      if (!children.empty()) throw ValidationError(where + ": level-5 point has children");
      if (principles.size() < kMinPrinciplesPerLeaf || principles.size() > kMaxPrinciplesPerLeaf) {
        throw ValidationError(where + ": principle count out of [1,7] (" +
                              std::to_string(principles.size()) + ")");
      }
    } else {
      if (!principles.empty()) throw ValidationError(where + ": non-leaf point carries principles");
      if (children.empty()) {
        throw ValidationError(where + ": branch ends at level " + std::to_string(kp.level) +
                              " (every root-to-leaf path must span 5 levels)");
      }
    }

    for (const auto& pj : principles) {
      Principle pr;
      pr.id = require_field<std::string>(pj, "id", where + " principle");
      const std::string pwhere = "principle '" + pr.id + "'";
      if (principle_index_.count(pr.id) != 0) throw ValidationError(pwhere + ": duplicate id");
      const auto kind = parse_principle_kind(require_field<std::string>(pj, "kind", pwhere));
      if (!kind) throw ValidationError(pwhere + ": kind must be definition|theorem|application");
      pr.kind = *kind;
      pr.statement = pj.value("statement", std::string{});
      pr.owner_point = id;
      principle_index_.emplace(pr.id, principles_.size());
      kp.principle_ids.push_back(pr.id);
      principles_.push_back(std::move(pr));
    }

    const std::size_t index = points_.size();
    point_index_.emplace(id, index);
    points_.push_back(std::move(kp));
    if (parent) {
      points_[point_index_.at(*parent)].child_ids.push_back(id);
    } else {
      roots_.push_back(id);
    }
    if (expected_level == kHierarchyDepth) ++leaf_count_;
    for (const auto& child : children) add_subtree(child, id, expected_level + 1);
  }

  void check_totals(const HierarchyLoadOptions& opts) {
    if (opts.expected_leaves && *opts.expected_leaves != leaf_count_) {
      warnings_.push_back("leaf count " + std::to_string(leaf_count_) + " differs from expected " +
                          std::to_string(*opts.expected_leaves));
    }
    if (opts.expected_principles && *opts.expected_principles != principles_.size()) {
      warnings_.push_back("principle count " + std::to_string(principles_.size()) +
                          " differs from expected " + std::to_string(*opts.expected_principles));
    }
  }

  json subtree_json(const std::string& id) const {
    const auto& p = points_[point_index_.at(id)];
    json node = {{"id", p.id}, {"name", p.name}, {"level", p.level}};
    if (!p.principle_ids.empty()) {
      json prs = json::array();
      for (const auto& pid : p.principle_ids) {
        const auto& pr = principles_[principle_index_.at(pid)];
        prs.push_back({{"id", pr.id}, {"kind", to_string(pr.kind)}, {"statement", pr.statement}});
      }
      node["principles"] = std::move(prs);
    }
    if (!p.child_ids.empty()) {
      json ch = json::array();
      for (const auto& c : p.child_ids) ch.push_back(subtree_json(c));
      node["children"] = std::move(ch);
    }
    return node;
  }

  std::vector<KnowledgePoint> points_;
  std::vector<Principle> principles_;
  std::vector<std::string> roots_;
  std::vector<std::string> warnings_;
  std::unordered_map<std::string, std::size_t> point_index_;
  std::unordered_map<std::string, std::size_t> principle_index_;
  std::size_t leaf_count_ = 0;
};

inline KnowledgeHierarchy load_hierarchy(const std::filesystem::path& path,
                                         const HierarchyLoadOptions& opts = {}) {
  return KnowledgeHierarchy::from_json(read_json_file(path), opts);
}

/// Ids must exist; step points must be leaves.
inline void validate_annotation(const KnowledgeAnnotation& a, const KnowledgeHierarchy& store) {
  const std::string where = "annotation of '" + a.problem_id + "'";
  if (a.step_points.empty()) throw ValidationError(where + ": no step points");
  for (const auto& id : a.step_points) {
    const auto* p = store.find_point(id);
    if (p == nullptr) throw ValidationError(where + ": unknown knowledge point '" + id + "'");
    if (p->level != kHierarchyDepth) {
      throw ValidationError(where + ": step point '" + id + "' is not a leaf");
    }
  }
  for (const auto& id : a.principle_ids) {
    if (store.find_principle(id) == nullptr) {
      throw ValidationError(where + ": unknown principle '" + id + "'");
    }
  }
}

// ---------------------------------------------------------------------------
// Step tagging

/// Resolves one solution step to a knowledge point id; an empty result means
/// the step could not be resolved.
class StepTagger {
 public:
  virtual ~StepTagger() = default;
  virtual std::string tag(std::string_view step_text) const = 0;
};

/// Offline tagger: case-insensitive substring lookup over a keyword table.
/// The longest matching keyword wins; equal lengths fall back to table order.
class KeywordTagger final : public StepTagger {
 public:
  KeywordTagger() = default;
  explicit KeywordTagger(std::vector<std::pair<std::string, std::string>> table) {
    for (auto& [kw, id] : table) add(std::move(kw), std::move(id));
  }

  void add(std::string keyword, std::string point_id) {
    table_.emplace_back(lower(keyword), std::move(point_id));
  }

  static KeywordTagger from_json(const json& doc) {
    KeywordTagger t;
    for (const auto& row : doc) {
      t.add(require_field<std::string>(row, "keyword", "tagger row"),
            require_field<std::string>(row, "point", "tagger row"));
    }
    return t;
  }

  std::string tag(std::string_view step_text) const override {
    const std::string text = lower(step_text);
    const std::pair<std::string, std::string>* best = nullptr;
    for (const auto& entry : table_) {
      if (text.find(entry.first) == std::string::npos) continue;
      if (best == nullptr || entry.first.size() > best->first.size()) best = &entry;
    }
    return best ? best->second : std::string{};
  }

 private:
  static std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
  }

  std::vector<std::pair<std::string, std::string>> table_;
};

/// One step point per solution step, in order.
inline KnowledgeAnnotation annotate_steps(std::string_view problem_id,
                                          std::span<const std::string> solution_steps,
                                          const StepTagger& tagger,
                                          const KnowledgeHierarchy& store) {
  const std::string where = "annotate '" + std::string(problem_id) + "'";
  if (solution_steps.empty()) throw ValidationError(where + ": empty solution");
  KnowledgeAnnotation out;
  out.problem_id = std::string(problem_id);
  for (std::size_t i = 0; i < solution_steps.size(); ++i) {
    std::string id = tagger.tag(solution_steps[i]);
    const std::string step = "step " + std::to_string(i + 1);
    if (id.empty()) throw ValidationError(where + ": " + step + " could not be tagged");
    const auto* p = store.find_point(id);
    if (p == nullptr) throw ValidationError(where + ": " + step + " tagged with unknown id '" + id + "'");
    if (p->level != kHierarchyDepth) {
      throw ValidationError(where + ": " + step + " tagged with non-leaf id '" + id + "'");
    }
    out.step_points.push_back(std::move(id));
  }
  return out;
}

}  // namespace mathbook
