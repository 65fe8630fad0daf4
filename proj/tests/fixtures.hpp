#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mathbook/mathbook.hpp"

namespace fixtures {

using namespace mathbook;

/// One branch D1 > S1 > T1 > U1 with leaves k1..kN, one principle each (p1..pN).
inline json chain_hierarchy(int leaves, int principles_per_leaf = 1) {
  json u = {{"id", "U1"}, {"name", "subtopic"}, {"level", 4}, {"children", json::array()}};
  for (int i = 1; i <= leaves; ++i) {
    json prs = json::array();
    for (int k = 0; k < principles_per_leaf; ++k) {
      prs.push_back({{"id", "p" + std::to_string(i) + (k ? "_" + std::to_string(k) : "")},
                     {"kind", "theorem"},
                     {"statement", "statement " + std::to_string(i)}});
    }
    u["children"].push_back(
        {{"id", "k" + std::to_string(i)}, {"name", "point " + std::to_string(i)}, {"level", 5}, {"principles", prs}});
  }
  return {{"id", "D1"},
          {"name", "Geometry"},
          {"level", 1},
          {"children",
           {{{"id", "S1"},
             {"name", "Plane Geometry"},
             {"level", 2},
             {"children", {{{"id", "T1"}, {"name", "topic"}, {"level", 3}, {"children", {u}}}}}}}}};
}

inline std::vector<std::string> points(std::initializer_list<int> ids) {
  std::vector<std::string> out;
  for (int i : ids) out.push_back("k" + std::to_string(i));
  return out;
}

inline std::vector<std::string> point_range(int from, int to) {
  std::vector<std::string> out;
  for (int i = from; i <= to; ++i) out.push_back("k" + std::to_string(i));
  return out;
}

inline Problem problem(std::string id, std::string seed, std::vector<std::string> pts, DifficultyCoordinate coord = {},
                       std::string question = "", std::optional<std::string> image = std::nullopt) {
  Problem p;
  p.id = std::move(id);
  p.seed_id = seed.empty() ? p.id : std::move(seed);
  p.question = question.empty() ? "question " + p.id : std::move(question);
  p.answer = "1";
  p.image_ref = image ? image : std::optional<std::string>("img/" + p.id + ".png");
  p.annotation.problem_id = p.id;
  p.annotation.step_points = std::move(pts);
  p.annotation.principle_ids = {"p1"};
  p.knowledge_count = static_cast<int>(p.annotation.step_points.size());
  p.difficulty = coord;
  return p;
}

/// Eight lattice corners for `seed`: base points on the seed side, base plus
/// `extra` on the s side, with intermediate deepening ranks when extra > 1.
struct LatticeBuild {
  std::vector<Problem> problems;
  DifficultyLattice lattice;
};

inline LatticeBuild lattice(const std::string& seed, std::vector<std::string> base, std::vector<std::string> extra) {
  LatticeBuild b;
  b.lattice.seed_id = seed;
  const int rank = static_cast<int>(extra.size());
  std::vector<std::string> top = base;
  top.insert(top.end(), extra.begin(), extra.end());
  const auto add = [&](const std::string& key, const std::vector<std::string>& pts, DifficultyCoordinate c) {
    const std::string id = key == "seed" ? seed : seed + "-" + key;
    b.problems.push_back(problem(id, key == "seed" ? "" : seed, pts, c));
    b.lattice.nodes[key] = id;
  };
  add("seed", base, {0, false, false});
  add("s", top, {rank, false, false});
  add("v", base, {0, true, false});
  add("c", base, {0, false, true});
  add("sv", top, {rank, true, false});
  add("sc", top, {rank, false, true});
  add("vc", base, {0, true, true});
  add("svc", top, {rank, true, true});
  for (int r = 1; r < rank; ++r) {
    std::vector<std::string> pts = base;
    pts.insert(pts.end(), extra.begin(), extra.begin() + r);
    b.problems.push_back(problem(seed + "-s" + std::to_string(r), seed, pts, {r, false, false}));
  }
  return b;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mathbook_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Completion completion(std::string answer, bool format_ok) {
  Completion c;
  c.decoded_answer = std::move(answer);
  c.format_ok = format_ok;
  return c;
}

}  // namespace fixtures
