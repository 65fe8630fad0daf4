#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mathbook/error.hpp"
#include "mathbook/json_io.hpp"

namespace mathbook {

struct SimilarityMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> values;

  std::size_t size() const { return labels.size(); }

  /// Symmetric, unit diagonal, finite, entries in [0,1].
  void validate(double tol = 1e-12) const {
    const std::size_t n = labels.size();
    if (n == 0) throw ValidationError("similarity matrix: no labels");
    if (values.size() != n) throw ValidationError("similarity matrix: row count != label count");
    for (std::size_t i = 0; i < n; ++i) {
      if (values[i].size() != n) {
        throw ValidationError("similarity matrix: row " + std::to_string(i) + " has wrong length");
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = values[i][j];
        const std::string cell = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
        if (!std::isfinite(v)) throw ValidationError("similarity matrix: non-finite value at " + cell);
        if (v < -tol || v > 1.0 + tol) throw ValidationError("similarity matrix: value out of [0,1] at " + cell);
        if (std::abs(v - values[j][i]) > tol) throw ValidationError("similarity matrix: not symmetric at " + cell);
      }
      if (std::abs(values[i][i] - 1.0) > tol) {
        throw ValidationError("similarity matrix: diagonal entry " + std::to_string(i) + " is not 1");
      }
    }
    std::vector<std::string> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("similarity matrix: duplicate labels");
    }
  }

  static SimilarityMatrix from_json(const json& doc) {
    SimilarityMatrix s;
    s.labels = require_field<std::vector<std::string>>(doc, "labels", "similarity file");
    s.values = require_field<std::vector<std::vector<double>>>(doc, "values", "similarity file");
    return s;
  }
};

/// One agglomeration step. Node ids follow the usual convention: 0..n-1 are
/// the labels, merge i creates node n+i.
struct Merge {
  std::size_t left = 0;
  std::size_t right = 0;
  double distance = 0.0;
  std::size_t size = 0;
};

class ClusterTree {
 public:
  ClusterTree() = default;
  ClusterTree(std::vector<std::string> labels, std::vector<Merge> merges)
      : labels_(std::move(labels)), merges_(std::move(merges)) {}

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<Merge>& merges() const { return merges_; }

  /// Flat clustering with exactly `k` clusters (undo the last k-1 merges).
  /// Members are sorted; clusters are ordered by their smallest label.
  std::vector<std::vector<std::string>> cut(std::size_t k) const {
    const std::size_t n = labels_.size();
    if (k < 1 || k > n) {
      throw ValidationError("cut level " + std::to_string(k) + " out of [1," + std::to_string(n) + "]");
    }
    std::vector<std::vector<std::size_t>> members(2 * n);
    for (std::size_t i = 0; i < n; ++i) members[i] = {i};
    std::vector<bool> alive(2 * n, false);
    for (std::size_t i = 0; i < n; ++i) alive[i] = true;
    for (std::size_t m = 0; m < n - k; ++m) {
      const auto& mg = merges_[m];
      const std::size_t node = n + m;
      members[node] = members[mg.left];
      members[node].insert(members[node].end(), members[mg.right].begin(), members[mg.right].end());
      alive[mg.left] = alive[mg.right] = false;
      alive[node] = true;
    }
    std::vector<std::vector<std::string>> out;
    for (std::size_t node = 0; node < 2 * n; ++node) {
      if (!alive[node]) continue;
      std::vector<std::string> c;
      for (auto i : members[node]) c.push_back(labels_[i]);
      std::sort(c.begin(), c.end());
      out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return out;
  }

  json to_json() const {
    json merges = json::array();
    for (const auto& m : merges_) {
      merges.push_back({{"left", m.left}, {"right", m.right}, {"distance", m.distance}, {"size", m.size}});
    }
    return {{"labels", labels_}, {"merges", merges}};
  }

 private:
  std::vector<std::string> labels_;
  std::vector<Merge> merges_;
};

/// Average-linkage agglomerative clustering over distance 1 - similarity.
/// Among pairs at equal distance (within 1e-12) the pair whose smallest
/// member labels are lexicographically smallest merges first.
inline ClusterTree cluster_tags(const SimilarityMatrix& sim) {
  constexpr double tie_tol = 1e-12;
  sim.validate();
  const std::size_t n = sim.size();
  // Cross-similarity sums between active clusters; slot i holds the cluster
  // whose tree node id is node_of[i].
  std::vector<std::vector<double>> cross = sim.values;
  std::vector<std::size_t> count(n, 1);
  std::vector<std::size_t> node_of(n);
  std::vector<std::string> min_label = sim.labels;
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) node_of[i] = i;

  std::vector<Merge> merges;
  merges.reserve(n > 0 ? n - 1 : 0);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best_a = n, best_b = n;
    double best_d = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!active[b]) continue;
        const double d = 1.0 - cross[a][b] / static_cast<double>(count[a] * count[b]);
        // Order the pair by smallest member label for the tie-break key.
        const std::string& lo = std::min(min_label[a], min_label[b]);
        const std::string& hi = std::max(min_label[a], min_label[b]);
        bool better = false;
        if (best_a == n || d < best_d - tie_tol) {
          better = true;
        } else if (std::abs(d - best_d) <= tie_tol) {
          const std::string& blo = std::min(min_label[best_a], min_label[best_b]);
          const std::string& bhi = std::max(min_label[best_a], min_label[best_b]);
          better = (lo < blo) || (lo == blo && hi < bhi);
        }
        if (better) {
          best_a = a;
          best_b = b;
          best_d = d;
        }
      }
    }
    // Keep the cluster with the smaller label on the left.
    std::size_t keep = best_a, drop = best_b;
    if (min_label[drop] < min_label[keep]) std::swap(keep, drop);
    merges.push_back({node_of[keep], node_of[drop], best_d, count[keep] + count[drop]});
    for (std::size_t c = 0; c < n; ++c) {
      if (!active[c] || c == keep || c == drop) continue;
      cross[keep][c] += cross[drop][c];
      cross[c][keep] = cross[keep][c];
    }
    count[keep] += count[drop];
    min_label[keep] = std::min(min_label[keep], min_label[drop]);
    node_of[keep] = n + step;
    active[drop] = false;
  }
  return ClusterTree(sim.labels, std::move(merges));
}

struct ClusteringResult {
  ClusterTree tree;
  std::vector<std::vector<std::string>> clusters;
};

/// Builds the merge tree and cuts it into `target_clusters` flat clusters.
inline ClusteringResult cluster_tags(const SimilarityMatrix& sim, std::size_t target_clusters) {
  ClusteringResult r{cluster_tags(sim), {}};
  r.clusters = r.tree.cut(target_clusters);
  return r;
}

}  // namespace mathbook
