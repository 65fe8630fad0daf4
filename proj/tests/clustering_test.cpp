#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "mathbook/synthetic_data.hpp"

using namespace mathbook;

namespace {

using Partition = std::vector<std::vector<std::string>>;

/// Textbook average linkage: recompute mean pairwise distance from member lists.
struct NaiveMerge {
  std::vector<std::string> members;
  double distance;
};

std::vector<NaiveMerge> naive_average_linkage(const SimilarityMatrix& s) {
  std::vector<std::vector<std::size_t>> clusters;
  for (std::size_t i = 0; i < s.size(); ++i) clusters.push_back({i});
  const auto min_label = [&](const std::vector<std::size_t>& c) {
    std::string m = s.labels[c[0]];
    for (auto i : c) m = std::min(m, s.labels[i]);
    return m;
  };
  std::vector<NaiveMerge> out;
  while (clusters.size() > 1) {
    std::size_t ba = 0, bb = 1;
    double bd = 1e300;
    std::pair<std::string, std::string> bkey;
    for (std::size_t a = 0; a < clusters.size(); ++a) {
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double sum = 0.0;
        for (auto i : clusters[a]) {
          for (auto j : clusters[b]) sum += 1.0 - s.values[i][j];
        }
        const double d = sum / static_cast<double>(clusters[a].size() * clusters[b].size());
        auto la = min_label(clusters[a]), lb = min_label(clusters[b]);
        std::pair<std::string, std::string> key{std::min(la, lb), std::max(la, lb)};
        if (d < bd - 1e-12 || (std::abs(d - bd) <= 1e-12 && key < bkey)) {
          bd = d;
          ba = a;
          bb = b;
          bkey = key;
        }
      }
    }
    auto merged = clusters[ba];
    merged.insert(merged.end(), clusters[bb].begin(), clusters[bb].end());
    NaiveMerge m{{}, bd};
    for (auto i : merged) m.members.push_back(s.labels[i]);
    std::sort(m.members.begin(), m.members.end());
    out.push_back(m);
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    clusters[ba] = merged;
  }
  return out;
}

std::vector<std::string> tree_members(const ClusterTree& t, std::size_t node) {
  const std::size_t n = t.labels().size();
  if (node < n) return {t.labels()[node]};
  auto l = tree_members(t, t.merges()[node - n].left);
  auto r = tree_members(t, t.merges()[node - n].right);
  l.insert(l.end(), r.begin(), r.end());
  std::sort(l.begin(), l.end());
  return l;
}

SimilarityMatrix two_blocks() {
  SimilarityMatrix s;
  s.labels = {"a", "b", "c", "d", "e", "f"};
  s.values.assign(6, std::vector<double>(6, 0.1));
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      if (i == j) {
        s.values[i][j] = 1.0;
      } else if ((i < 3) == (j < 3)) {
        s.values[i][j] = 0.9;
      }
    }
  }
  return s;
}

}  // namespace

TEST(Clustering, SingleLabel) {
  SimilarityMatrix s{{"only"}, {{1.0}}};
  const auto r = cluster_tags(s, 1);
  EXPECT_TRUE(r.tree.merges().empty());
  EXPECT_EQ(r.clusters, (Partition{{"only"}}));
}

TEST(Clustering, TwoBlocksMatchBruteForceBestTwoPartition) {
  const auto s = two_blocks();
  // Oracle: enumerate every 2-partition, keep the one with the largest
  // within-cluster similarity sum.
  double best = -1.0;
  Partition best_part;
  for (unsigned mask = 1; mask < (1u << 6) - 1; ++mask) {
    if (mask & 1u) continue;  // fix label 0 on side 0 to avoid duplicates
    double within = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = i + 1; j < 6; ++j) {
        if (((mask >> i) & 1u) == ((mask >> j) & 1u)) within += s.values[i][j];
      }
    }
    if (within > best) {
      best = within;
      Partition p(2);
      for (std::size_t i = 0; i < 6; ++i) p[(mask >> i) & 1u].push_back(s.labels[i]);
      best_part = p;
    }
  }
  EXPECT_EQ(cluster_tags(s, 2).clusters, best_part);
}

TEST(Clustering, AllIdenticalSimilaritiesMergeLexicographically) {
  SimilarityMatrix s;
  s.labels = {"d", "b", "a", "c"};
  s.values.assign(4, std::vector<double>(4, 0.5));
  for (std::size_t i = 0; i < 4; ++i) s.values[i][i] = 1.0;
  const auto tree = cluster_tags(s);
  ASSERT_EQ(tree.merges().size(), 3u);
  // Tie-break on (smaller, larger) smallest member labels: {a,b}, then {a..}+{c}, then +{d}.
  EXPECT_EQ(tree_members(tree, 4), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(tree_members(tree, 5), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(tree_members(tree, 6), (std::vector<std::string>{"a", "b", "c", "d"}));
  for (const auto& m : tree.merges()) EXPECT_NEAR(m.distance, 0.5, 1e-12);
}

TEST(Clustering, MatchesNaiveAverageLinkageOnRandomMatrices) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng(seed);
    const std::size_t n = 2 + rng.below(10);
    SimilarityMatrix s;
    for (std::size_t i = 0; i < n; ++i) s.labels.push_back("t" + std::to_string(100 + rng.below(900)) + "_" + std::to_string(i));
    s.values.assign(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        // Coarse grid so ties actually occur.
        s.values[i][j] = s.values[j][i] = static_cast<double>(rng.below(5)) / 4.0;
      }
    }
    const auto tree = cluster_tags(s);
    const auto naive = naive_average_linkage(s);
    ASSERT_EQ(tree.merges().size(), naive.size());
    for (std::size_t m = 0; m < naive.size(); ++m) {
      EXPECT_EQ(tree_members(tree, n + m), naive[m].members) << "seed " << seed << " merge " << m;
      EXPECT_NEAR(tree.merges()[m].distance, naive[m].distance, 1e-9);
    }
  }
}

TEST(Clustering, RecoversPlantedBlocksAtMatchingCut) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sizes = oracles::random_block_sizes(rng);
    std::size_t n = 0;
    for (auto k : sizes) n += k;
    ASSERT_LE(n, 30u);
    const auto [s, blocks] = synth::planted_blocks(sizes, rng.below(1u << 30));
    const auto r = cluster_tags(s, sizes.size());
    EXPECT_TRUE(oracles::same_partition(r.clusters, blocks)) << "trial " << trial;
  }
}

TEST(Clustering, CutYieldsKDisjointClustersCoveringAllLabels) {
  const auto [s, blocks] = synth::planted_blocks({5, 4, 6}, 3);
  const auto tree = cluster_tags(s);
  for (std::size_t k = 1; k <= s.size(); ++k) {
    const auto part = tree.cut(k);
    ASSERT_EQ(part.size(), k);
    std::multiset<std::string> all;
    for (const auto& c : part) all.insert(c.begin(), c.end());
    EXPECT_EQ(all.size(), s.size());
    EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), s.size());
  }
  EXPECT_THROW(tree.cut(0), ValidationError);
  EXPECT_THROW(tree.cut(s.size() + 1), ValidationError);
}

TEST(Clustering, InvalidMatricesRejected) {
  SimilarityMatrix asym{{"a", "b"}, {{1.0, 0.3}, {0.4, 1.0}}};
  EXPECT_THROW(cluster_tags(asym), ValidationError);
  SimilarityMatrix nan{{"a", "b"}, {{1.0, std::nan("")}, {std::nan(""), 1.0}}};
  EXPECT_THROW(cluster_tags(nan), ValidationError);
  SimilarityMatrix diag{{"a", "b"}, {{0.9, 0.3}, {0.3, 1.0}}};
  EXPECT_THROW(cluster_tags(diag), ValidationError);
  SimilarityMatrix ragged{{"a", "b"}, {{1.0}, {0.3, 1.0}}};
  EXPECT_THROW(cluster_tags(ragged), ValidationError);
}

TEST(Clustering, SimilarityFileRoundTrip) {
  const auto s = two_blocks();
  const auto back = SimilarityMatrix::from_json(json{{"labels", s.labels}, {"values", s.values}});
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.values, s.values);
}
