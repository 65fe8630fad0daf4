#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mathbook/clustering.hpp"
#include "mathbook/eval.hpp"
#include "mathbook/knowledge_store.hpp"
#include "mathbook/policy.hpp"
#include "mathbook/problem_corpus.hpp"
#include "mathbook/rng.hpp"

// Deterministic generators for fixtures and demo data. None of this content
// is real curriculum material.

namespace mathbook::synth {

inline const std::vector<std::pair<std::string, std::vector<std::string>>>& domain_layout() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> layout = {
      {"Fundamental Skills", {"Numbers and Operations", "Computational Methods", "Measurement"}},
      {"Probability and Statistics", {"Probability", "Statistics", "Counting"}},
      {"Geometry", {"Plane Geometry", "Solid Geometry", "Analytic Geometry", "Transformations"}},
      {"Algebra", {"Equations and Inequalities", "Functions", "Sequences"}},
  };
  return layout;
}

inline std::string pad_number(std::size_t n, int width) {
  std::string s = std::to_string(n);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

inline std::string leaf_id(std::size_t i) { return "k" + pad_number(i + 1, 3); }

/// Five-level tree: 4 domains, 13 subdomains, 2 topics each, 2 subtopics
/// each, and `leaves` knowledge points spread over the subtopics. Principle
/// counts are spread so that each leaf has 1..7 and the total is `principles`.
inline json hierarchy_json(std::size_t leaves = 491, std::size_t principles = 1819) {
  if (principles < leaves || principles > 7 * leaves) throw ValidationError("synthetic hierarchy: bad principle total");
  const auto& layout = domain_layout();
  std::size_t subtopics = 0;
  for (const auto& [d, subs] : layout) subtopics += subs.size() * 4;

  std::vector<std::size_t> per_leaf(leaves, principles / leaves);
  for (std::size_t i = 0; i < principles % leaves; ++i) per_leaf[(i * 7) % leaves] += 1;
  // Rebalance so the loop above cannot double-count when leaves is small.
  std::size_t sum = 0;
  for (auto c : per_leaf) sum += c;
  for (std::size_t i = 0; sum < principles; i = (i + 1) % leaves) {
    if (per_leaf[i] < 7) {
      ++per_leaf[i];
      ++sum;
    }
  }
  for (std::size_t i = 0; sum > principles; i = (i + 1) % leaves) {
    if (per_leaf[i] > 1) {
      --per_leaf[i];
      --sum;
    }
  }

  static const char* kinds[] = {"definition", "theorem", "application"};
  std::size_t leaf = 0, principle = 0, subtopic_index = 0;
  json roots = json::array();
  for (std::size_t d = 0; d < layout.size(); ++d) {
    const std::string did = "D" + std::to_string(d + 1);
    json dnode = {{"id", did}, {"name", layout[d].first}, {"level", 1}, {"children", json::array()}};
    for (std::size_t s = 0; s < layout[d].second.size(); ++s) {
      const std::string sid = did + ".S" + std::to_string(s + 1);
      json snode = {{"id", sid}, {"name", layout[d].second[s]}, {"level", 2}, {"children", json::array()}};
      for (int t = 0; t < 2; ++t) {
        const std::string tid = sid + ".T" + std::to_string(t + 1);
        json tnode = {{"id", tid}, {"name", layout[d].second[s] + " topic " + std::to_string(t + 1)},
                      {"level", 3}, {"children", json::array()}};
        for (int u = 0; u < 2; ++u) {
          const std::string uid = tid + ".U" + std::to_string(u + 1);
          json unode = {{"id", uid}, {"name", tnode["name"].get<std::string>() + "." + std::to_string(u + 1)},
                        {"level", 4}, {"children", json::array()}};
          // Even spread of leaves over subtopics.
          const std::size_t hi = (subtopic_index + 1) * leaves / subtopics;
          for (; leaf < hi; ++leaf) {
            json prs = json::array();
            for (std::size_t k = 0; k < per_leaf[leaf]; ++k, ++principle) {
              prs.push_back({{"id", "p" + pad_number(principle + 1, 4)},
                             {"kind", kinds[(leaf + k) % 3]},
                             {"statement", "principle " + std::to_string(k + 1) + " of " + leaf_id(leaf)}});
            }
            unode["children"].push_back({{"id", leaf_id(leaf)},
                                         {"name", "concept " + leaf_id(leaf)},
                                         {"level", 5},
                                         {"principles", std::move(prs)}});
          }
          ++subtopic_index;
          if (unode["children"].empty()) {
            throw ValidationError("synthetic hierarchy: too few leaves for the layout");
          }
          tnode["children"].push_back(std::move(unode));
        }
        snode["children"].push_back(std::move(tnode));
      }
      dnode["children"].push_back(std::move(snode));
    }
    roots.push_back(std::move(dnode));
  }
  return roots;
}

/// Keyword table mapping "concept kNNN" phrases to their leaf.
inline KeywordTagger keyword_tagger(const KnowledgeHierarchy& store) {
  KeywordTagger t;
  for (const auto* leaf : store.leaves()) t.add(leaf->name, leaf->id);
  return t;
}

struct CorpusPlan {
  std::size_t image_groups = 24;       // principle groups of image variants
  std::size_t group_members = 3;
  std::size_t max_group_knowledge = 6;  // group g has 1 + g % this many points
  std::size_t question_groups = 8;
  std::size_t lattices = 2;
  int seed_knowledge = 4;              // knowledge points of each lattice seed
  int step_rank = 2;                   // s rank of the s corner
  std::size_t knowledge_aux = 2;       // standard problems per knowledge increment
};

struct CorpusParts {
  std::vector<Problem> problems;
  std::vector<VariantGroup> groups;
  std::vector<DifficultyLattice> lattices;
};

/// Toy corpus whose answers match the synthetic task attached to each problem.
inline CorpusParts corpus_parts(const KnowledgeHierarchy& store, const CorpusPlan& plan = {},
                                const TaskSpace& space = {}) {
  CorpusParts out;
  const auto leaves = store.leaves();
  std::size_t next_leaf = 0;
  const auto take_leaf = [&]() -> const KnowledgePoint* { return leaves[(next_leaf++) % leaves.size()]; };

  const auto add = [&](std::string id, std::string seed, std::string question, std::vector<std::string> points,
                       std::vector<std::string> principles, DifficultyCoordinate coord,
                       std::optional<std::string> image) -> Problem& {
    Problem p;
    p.id = std::move(id);
    p.seed_id = seed.empty() ? p.id : std::move(seed);
    p.question = std::move(question);
    p.image_ref = std::move(image);
    p.ggb_ref = p.image_ref ? std::optional<std::string>("ggb/" + p.id + ".xml") : std::nullopt;
    p.difficulty = coord;
    p.annotation.problem_id = p.id;
    p.annotation.step_points = std::move(points);
    p.annotation.principle_ids = std::move(principles);
    p.knowledge_count = static_cast<int>(p.annotation.step_points.size());
    for (const auto& k : p.annotation.step_points) p.solution_steps.push_back("apply concept " + k);
    p.answer = problem_task(p, space).correct_answer;
    out.problems.push_back(std::move(p));
    return out.problems.back();
  };

  for (std::size_t g = 0; g < plan.image_groups; ++g) {
    const auto* leaf = take_leaf();
    const std::string pid = leaf->principle_ids.front();
    std::vector<std::string> points{leaf->id};
    for (std::size_t k = 1; k < 1 + g % plan.max_group_knowledge; ++k) points.push_back(take_leaf()->id);
    VariantGroup group{VariantKind::image_variant, pid, {}};
    const std::string base = "img" + pad_number(g + 1, 2);
    for (std::size_t m = 0; m < plan.group_members; ++m) {
      const std::string id = base + "-" + std::to_string(m + 1);
      add(id, m == 0 ? "" : base + "-1", "image-variant question " + std::to_string(g + 1), points, {pid},
          {}, "img/" + id + ".png");
      group.member_ids.push_back(id);
    }
    out.groups.push_back(std::move(group));
  }

  for (std::size_t g = 0; g < plan.question_groups; ++g) {
    const auto* a = take_leaf();
    const auto* b = take_leaf();
    const std::string base = "qst" + pad_number(g + 1, 2);
    const std::string image = "img/" + base + ".png";
    add(base + "-1", "", "question variant A of " + base, {a->id}, {a->principle_ids.front()}, {}, image);
    add(base + "-2", base + "-1", "question variant B of " + base, {b->id}, {b->principle_ids.front()}, {}, image);
    out.groups.push_back({VariantKind::question_variant, a->principle_ids.front(), {base + "-1", base + "-2"}});
  }

  for (std::size_t l = 0; l < plan.lattices; ++l) {
    const std::string seed = "lat" + pad_number(l + 1, 2);
    std::vector<std::string> base_points;
    for (int i = 0; i < plan.seed_knowledge; ++i) base_points.push_back(take_leaf()->id);
    std::vector<std::vector<std::string>> chain{base_points};
    for (int r = 1; r <= plan.step_rank; ++r) {
      auto pts = chain.back();
      pts.push_back(take_leaf()->id);
      chain.push_back(std::move(pts));
    }
    const auto& top = chain.back();
    const std::string principle = store.find_point(base_points.front())->principle_ids.front();
    const auto image = [&](const std::string& id) { return std::optional<std::string>("img/" + id + ".png"); };
    DifficultyLattice lat{seed, {}};
    const auto node = [&](const std::string& key, const std::vector<std::string>& pts, DifficultyCoordinate c) {
      const std::string id = key == "seed" ? seed : seed + "-" + key;
      add(id, key == "seed" ? "" : seed, "lattice " + seed + " variant " + key, pts, {principle}, c, image(id));
      lat.nodes[key] = id;
    };
    const int R = plan.step_rank;
    node("seed", base_points, {0, false, false});
    for (int r = 1; r < R; ++r) {
      const std::string id = seed + "-s" + std::to_string(r);
      add(id, seed, "lattice " + seed + " deepening " + std::to_string(r), chain[static_cast<std::size_t>(r)],
          {principle}, {r, false, false}, image(id));
    }
    node("s", top, {R, false, false});
    node("v", base_points, {0, true, false});
    node("c", base_points, {0, false, true});
    node("sv", top, {R, true, false});
    node("sc", top, {R, false, true});
    node("vc", base_points, {0, true, true});
    node("svc", top, {R, true, true});
    out.lattices.push_back(std::move(lat));

    // Increment material: knowledge problems touching only the new points
    // (plus seed points) and modality problems at the source coordinates.
    std::vector<std::string> fresh(top.begin() + plan.seed_knowledge, top.end());
    for (std::size_t a = 0; a < plan.knowledge_aux; ++a) {
      const std::string id = seed + "-kx" + std::to_string(a + 1);
      std::vector<std::string> pts{base_points[a % base_points.size()], fresh[a % fresh.size()]};
      add(id, "", "knowledge increment " + std::to_string(a + 1) + " for " + seed, pts, {principle}, {}, image(id));
    }
    add(seed + "-mv", seed, "visual increment for " + seed, top, {principle}, {R, true, false}, image(seed + "-mv"));
    add(seed + "-mc", seed, "contextual increment for " + seed, top, {principle}, {R, false, true},
        image(seed + "-mc"));
    add(seed + "-mcv", seed, "visual increment over context for " + seed, top, {principle}, {R, true, true},
        image(seed + "-mcv"));
  }
  return out;
}

inline Corpus build_corpus(const KnowledgeHierarchy& store, const CorpusPlan& plan = {}, const TaskSpace& space = {}) {
  auto parts = corpus_parts(store, plan, space);
  return Corpus(std::move(parts.problems), std::move(parts.groups), std::move(parts.lattices), store);
}

/// `n` eval items with the level split given by `level_counts` (levels 1..3),
/// domains assigned round-robin, and every `wrong_every`-th prediction wrong.
inline std::vector<EvalItem> eval_items(const std::array<std::size_t, 3>& level_counts, std::uint64_t seed,
                                        std::size_t wrong_every = 3) {
  Rng rng(seed);
  const auto& layout = domain_layout();
  const int lo[3] = {1, 4, 7};
  const int span[3] = {3, 3, 4};
  std::vector<EvalItem> items;
  std::size_t idx = 0;
  for (int level = 0; level < 3; ++level) {
    for (std::size_t k = 0; k < level_counts[static_cast<std::size_t>(level)]; ++k, ++idx) {
      EvalItem it;
      it.problem_id = "eval" + pad_number(idx + 1, 4);
      it.reasoning_steps = lo[level] + static_cast<int>(rng.below(static_cast<std::uint64_t>(span[level])));
      const auto& dom = layout[idx % layout.size()];
      it.domain = dom.first;
      it.subdomain = dom.second[(idx / layout.size()) % dom.second.size()];
      it.question = "evaluation question " + std::to_string(idx + 1);
      it.gold = std::to_string(rng.below(100)) + ".5";
      it.prediction = (wrong_every != 0 && idx % wrong_every == 0) ? "B" : it.gold + "0";
      items.push_back(std::move(it));
    }
  }
  return items;
}

/// Similarity matrix with planted blocks: within-block similarities in
/// [0.7, 1), cross-block in [0, 0.3). Returns the matrix and block labels.
inline std::pair<SimilarityMatrix, std::vector<std::vector<std::string>>> planted_blocks(
    const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  Rng rng(seed);
  SimilarityMatrix s;
  std::vector<std::size_t> block_of;
  std::vector<std::vector<std::string>> blocks(sizes.size());
  std::size_t n = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) n += sizes[b];
  // Shuffle label order so blocks are not contiguous in label order.
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::size_t pos = 0;
  block_of.resize(n);
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (std::size_t k = 0; k < sizes[b]; ++k) block_of[perm[pos++]] = b;
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back("t" + pad_number(i, 2));
    blocks[block_of[i]].push_back(s.labels.back());
  }
  s.values.assign(n, std::vector<double>(n, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = block_of[i] == block_of[j] ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3);
      s.values[i][j] = s.values[j][i] = v;
    }
  }
  for (auto& b : blocks) std::sort(b.begin(), b.end());
  std::sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return {s, blocks};
}

}  // namespace mathbook::synth
