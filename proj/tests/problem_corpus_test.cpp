#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "mathbook/synthetic_data.hpp"

using namespace mathbook;
using fixtures::point_range;
using fixtures::points;

namespace {

KnowledgeHierarchy store12() { return KnowledgeHierarchy::from_json(fixtures::chain_hierarchy(12)); }

std::string corpus_error(std::vector<Problem> problems, std::vector<VariantGroup> groups,
                         std::vector<DifficultyLattice> lattices) {
  const auto store = store12();
  try {
    Corpus(std::move(problems), std::move(groups), std::move(lattices), store);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

/// Two seeds with full single-rank lattices: seed K=5, s side K=6.
fixtures::LatticeBuild two_lattices(std::vector<DifficultyLattice>& lattices) {
  auto a = fixtures::lattice("x0", point_range(1, 5), points({6}));
  auto b = fixtures::lattice("y0", point_range(2, 6), points({7}));
  lattices = {a.lattice, b.lattice};
  a.problems.insert(a.problems.end(), b.problems.begin(), b.problems.end());
  return a;
}

}  // namespace

TEST(Corpus, TwoSeedsWithFullLatticesGiveSixteenProblems) {
  const auto store = store12();
  std::vector<DifficultyLattice> lattices;
  auto build = two_lattices(lattices);
  const Corpus corpus(build.problems, {}, lattices, store);
  EXPECT_EQ(corpus.problems().size(), 16u);
  EXPECT_EQ(corpus.lattices().size(), 2u);
  EXPECT_EQ(corpus.stats().seeds, 2u);
  for (const auto& l : corpus.lattices()) EXPECT_TRUE(validate_lattice(l, corpus).passed());
}

TEST(Corpus, EmptyCorpusFileGivesEmptyIndexes) {
  const auto dir = fixtures::temp_dir("empty_corpus");
  write_text_file(dir / "problems.jsonl", "");
  const auto store = store12();
  const Corpus corpus = ingest_corpus(dir, store);
  EXPECT_TRUE(corpus.empty());
  EXPECT_EQ(corpus.point_index_size(), 0u);
  EXPECT_EQ(corpus.principle_index_size(), 0u);
  EXPECT_EQ(corpus.coordinate_index_size(), 0u);
}

TEST(Corpus, LatticeMissingVNamesSeedAndCoordinate) {
  std::vector<DifficultyLattice> lattices;
  auto build = two_lattices(lattices);
  lattices[1].nodes.erase("v");
  const auto err = corpus_error(build.problems, {}, lattices);
  EXPECT_NE(err.find("y0"), std::string::npos) << err;
  EXPECT_NE(err.find("{v}"), std::string::npos) << err;
}

TEST(Corpus, ProblemLevelErrors) {
  auto p = fixtures::problem("q", "", points({1, 2}));
  p.knowledge_count = 3;
  EXPECT_NE(corpus_error({p}, {}, {}).find("knowledge_count"), std::string::npos);

  p = fixtures::problem("q", "", points({1}));
  p.answer = "";
  EXPECT_NE(corpus_error({p}, {}, {}).find("empty answer"), std::string::npos);

  p = fixtures::problem("q", "", points({99}));
  EXPECT_NE(corpus_error({p}, {}, {}).find("k99"), std::string::npos);

  p = fixtures::problem("q", "", points({1}), {1, false, false});
  EXPECT_NE(corpus_error({p}, {}, {}).find("(0,false,false)"), std::string::npos);

  p = fixtures::problem("q", "nowhere", points({1}));
  EXPECT_NE(corpus_error({p}, {}, {}).find("dangling seed"), std::string::npos);

  EXPECT_NE(corpus_error({fixtures::problem("q", "", points({1})), fixtures::problem("q", "", points({2}))}, {}, {})
                .find("duplicate"),
            std::string::npos);
}

TEST(Corpus, GroupChecks) {
  const auto a = fixtures::problem("a", "", points({1}), {}, "same question", "img/a.png");
  const auto b = fixtures::problem("b", "", points({1}), {}, "same question", "img/b.png");
  const auto c = fixtures::problem("c", "", points({1}), {}, "other question", "img/a.png");
  EXPECT_EQ(corpus_error({a, b}, {{VariantKind::image_variant, "p1", {"a", "b"}}}, {}), "");
  EXPECT_NE(corpus_error({a, c}, {{VariantKind::image_variant, "p1", {"a", "c"}}}, {}).find("different question"),
            std::string::npos);
  EXPECT_EQ(corpus_error({a, c}, {{VariantKind::question_variant, "p1", {"a", "c"}}}, {}), "");
  EXPECT_NE(corpus_error({a, b}, {{VariantKind::question_variant, "p1", {"a", "b"}}}, {}).find("share the group image"),
            std::string::npos);
  EXPECT_NE(corpus_error({a}, {{VariantKind::image_variant, "p1", {"a"}}}, {}).find("at least 2"), std::string::npos);
  EXPECT_NE(corpus_error({a, b}, {{VariantKind::image_variant, "p99", {"a", "b"}}}, {}).find("unknown principle"),
            std::string::npos);
  EXPECT_NE(corpus_error({a, b}, {{VariantKind::image_variant, "p1", {"a", "zz"}}}, {}).find("dangling"),
            std::string::npos);
}

// ---------------------------------------------------------------------------
// validate_lattice

namespace {

LatticeReport report_for(const fixtures::LatticeBuild& b, const std::function<void(std::vector<Problem>&)>& edit = {}) {
  static const auto store = store12();
  auto problems = b.problems;
  if (edit) edit(problems);
  const Corpus corpus(problems, {}, {b.lattice}, store);
  return validate_lattice(b.lattice, corpus);
}

}  // namespace

TEST(ValidateLattice, ChainFourFiveSixPasses) {
  const auto b = fixtures::lattice("x0", point_range(1, 4), points({5, 6}));
  const auto r = report_for(b);
  EXPECT_TRUE(r.passed()) << r.to_json().dump();
  EXPECT_NE(r.rule(kRuleStepIncrement)->detail.find("[4,5,6]"), std::string::npos);
}

TEST(ValidateLattice, ChainFourSixFailsStepIncrement) {
  auto b = fixtures::lattice("x0", point_range(1, 4), points({5, 6}));
  // Drop the rank-1 intermediate and collapse the s side to rank 1: chain [4,6].
  std::erase_if(b.problems, [](const Problem& p) { return p.id == "x0-s1"; });
  for (auto& p : b.problems) {
    if (p.difficulty.s == 2) p.difficulty.s = 1;
  }
  const auto r = report_for(b);
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(r.rule(kRuleStepIncrement)->passed);
  EXPECT_EQ(r.first_failure()->rule, kRuleStepIncrement);
  EXPECT_TRUE(r.rule(kRuleMinComplexity)->passed);
}

TEST(ValidateLattice, HardestNodeWithFivePointsFailsMinimumComplexity) {
  const auto b = fixtures::lattice("x0", point_range(1, 4), points({5}));
  const auto r = report_for(b);
  EXPECT_TRUE(r.rule(kRuleStepIncrement)->passed);
  EXPECT_FALSE(r.rule(kRuleMinComplexity)->passed);
  EXPECT_EQ(r.first_failure()->rule, kRuleMinComplexity);
}

TEST(ValidateLattice, CoordinateMismatchReported) {
  const auto b = fixtures::lattice("x0", point_range(1, 5), points({6}));
  const auto r = report_for(b, [](std::vector<Problem>& ps) {
    for (auto& p : ps) {
      if (p.id == "x0-sv") p.difficulty.v = false;
    }
  });
  EXPECT_FALSE(r.rule(kRuleCoordinates)->passed);
  EXPECT_NE(r.rule(kRuleCoordinates)->detail.find("{sv}"), std::string::npos);
}

TEST(ValidateLattice, IncompleteCubeReportedWithoutThrowing) {
  const auto b = fixtures::lattice("x0", point_range(1, 5), points({6}));
  const auto store = store12();
  const Corpus corpus(b.problems, {}, {}, store);
  auto lat = b.lattice;
  lat.nodes.erase("svc");
  const auto r = validate_lattice(lat, corpus);
  EXPECT_EQ(r.first_failure()->rule, kRuleCube);
  EXPECT_EQ(r.rules.size(), 4u);
}

// ---------------------------------------------------------------------------
// principle_groups

TEST(PrincipleGroups, Examples) {
  const auto store = store12();
  auto img = [](std::string id, std::string q) {
    return fixtures::problem(id, "", points({1}), {}, std::move(q), "img/" + id + ".png");
  };
  std::vector<Problem> ps = {img("a1", "qa"), img("a2", "qa"), img("a3", "qa"), img("b1", "qb"), img("b2", "qb")};

  const Corpus one(ps, {{VariantKind::image_variant, "p1", {"a1", "a2", "a3"}}}, {}, store);
  const auto g1 = principle_groups(one);
  ASSERT_EQ(g1.size(), 1u);
  EXPECT_EQ(g1[0].member_ids.size(), 3u);

  const Corpus merged(ps, {{VariantKind::image_variant, "p2", {"a1", "a2", "a3"}},
                           {VariantKind::image_variant, "p2", {"b1", "b2"}},
                           {VariantKind::image_variant, "p1", {"b1", "b2"}}},
                      {}, store);
  const auto g2 = principle_groups(merged);
  ASSERT_EQ(g2.size(), 2u);
  EXPECT_EQ(g2[0].principle_id, "p1");
  EXPECT_EQ(g2[1].principle_id, "p2");
  EXPECT_EQ(g2[1].member_ids, (std::vector<std::string>{"a1", "a2", "a3", "b1", "b2"}));

  auto q1 = fixtures::problem("c1", "", points({1}), {}, "first", "img/shared.png");
  auto q2 = fixtures::problem("c2", "", points({1}), {}, "second", "img/shared.png");
  const Corpus only_q({q1, q2}, {{VariantKind::question_variant, "p1", {"c1", "c2"}}}, {}, store);
  EXPECT_TRUE(principle_groups(only_q).empty());
}

// ---------------------------------------------------------------------------
// Round trip and index properties on the generated demo corpus

TEST(Corpus, WriteIngestRoundTripIsIdentity) {
  const auto store = KnowledgeHierarchy::from_json(synth::hierarchy_json());
  const Corpus a = synth::build_corpus(store);
  const auto dir = fixtures::temp_dir("roundtrip");
  a.write(dir);
  const Corpus b = ingest_corpus(dir, store);
  EXPECT_EQ(a.problems(), b.problems());
  ASSERT_EQ(a.groups().size(), b.groups().size());
  for (std::size_t i = 0; i < a.groups().size(); ++i) EXPECT_EQ(to_json(a.groups()[i]), to_json(b.groups()[i]));
  ASSERT_EQ(a.lattices().size(), b.lattices().size());
  for (std::size_t i = 0; i < a.lattices().size(); ++i) EXPECT_EQ(a.lattices()[i].nodes, b.lattices()[i].nodes);
}

TEST(Corpus, IndexesAgreeWithLinearScans) {
  const auto store = KnowledgeHierarchy::from_json(synth::hierarchy_json());
  const Corpus c = synth::build_corpus(store);
  const auto ids = [](const std::vector<const Problem*>& v) {
    std::vector<std::string> out;
    for (const auto* p : v) out.push_back(p->id);
    std::sort(out.begin(), out.end());
    return out;
  };
  for (const auto* leaf : store.leaves()) {
    std::vector<const Problem*> scan;
    for (const auto& p : c.problems()) {
      if (std::find(p.annotation.step_points.begin(), p.annotation.step_points.end(), leaf->id) !=
          p.annotation.step_points.end()) {
        scan.push_back(&p);
      }
    }
    EXPECT_EQ(ids(c.by_point(leaf->id)), ids(scan));
  }
  for (const auto& pr : store.principles()) {
    std::vector<const Problem*> scan;
    for (const auto& p : c.problems()) {
      const auto& v = p.annotation.principle_ids;
      if (std::find(v.begin(), v.end(), pr.id) != v.end()) scan.push_back(&p);
    }
    EXPECT_EQ(ids(c.by_principle(pr.id)), ids(scan));
  }
  for (int s = 0; s <= 2; ++s) {
    for (bool v : {false, true}) {
      for (bool cc : {false, true}) {
        std::vector<const Problem*> scan;
        for (const auto& p : c.problems()) {
          if (p.difficulty == DifficultyCoordinate{s, v, cc}) scan.push_back(&p);
        }
        EXPECT_EQ(ids(c.by_coordinate({s, v, cc})), ids(scan));
      }
    }
  }
}

TEST(Corpus, ComposedNodesCarryPositiveStepRank) {
  const auto store = KnowledgeHierarchy::from_json(synth::hierarchy_json());
  const Corpus c = synth::build_corpus(store);
  for (const auto& l : c.lattices()) {
    for (const auto& [key, id] : l.nodes) {
      if (key != "seed" && key.find('s') != std::string::npos) EXPECT_GE(c.at(id).difficulty.s, 1);
    }
    EXPECT_TRUE(validate_lattice(l, c).passed());
  }
}

TEST(Canonical, AnswerNormalisation) {
  EXPECT_EQ(canonicalize_answer("  0.50 "), "0.5");
  EXPECT_EQ(canonicalize_answer("2.000"), "2");
  EXPECT_EQ(canonicalize_answer("ABC"), "abc");
  EXPECT_EQ(canonicalize_answer("100"), "100");
  EXPECT_TRUE(answers_match("3.10", "3.1"));
  EXPECT_FALSE(answers_match("31", "3.1"));
}
