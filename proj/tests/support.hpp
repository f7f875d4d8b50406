#pragma once

// Brute-force oracles and random generators shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vanguard/common.hpp"
#include "vanguard/geometry.hpp"
#include "vanguard/scene_gate.hpp"

namespace vt {

using vanguard::geometry::Box;

inline double unit(std::mt19937_64& rng) { return vanguard::uniform_unit(rng); }

/// Box with both sides at least `min_side`.
inline Box random_box(std::mt19937_64& rng, double min_side = 0.02) {
  const double w = min_side + unit(rng) * (1.0 - min_side);
  const double h = min_side + unit(rng) * (1.0 - min_side);
  const double x = unit(rng) * (1.0 - w);
  const double y = unit(rng) * (1.0 - h);
  return Box{x, y, x + w, y + h};
}

/// Small box somewhere in the frame; sets of these overlap only sometimes.
inline Box random_small_box(std::mt19937_64& rng) {
  const double w = 0.05 + unit(rng) * 0.35;
  const double h = 0.05 + unit(rng) * 0.35;
  const double x = unit(rng) * (1.0 - w);
  const double y = unit(rng) * (1.0 - h);
  return Box{x, y, x + w, y + h};
}

/// Minimum total cost over every injection of the smaller side into the
/// larger one.
inline double brute_min_cost(const std::vector<std::vector<double>>& cost) {
  if (cost.empty() || cost[0].empty()) return 0.0;
  const std::size_t rows = cost.size(), cols = cost[0].size();
  const bool transpose = rows > cols;
  const std::size_t small = transpose ? cols : rows, large = transpose ? rows : cols;
  std::vector<std::size_t> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < small; ++i) total += transpose ? cost[perm[i]][i] : cost[i][perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Among all partial one-to-one matchings using pairs with IoU > 0, the one
/// whose IoU list sorted in descending order is lexicographically largest
/// (a longer list beats its own prefix). Returned as sorted (pred, gt) pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> brute_best_match(const std::vector<Box>& preds,
                                                                         const std::vector<Box>& gts) {
  std::vector<std::pair<std::size_t, std::size_t>> best, cur;
  std::vector<double> best_key;
  std::vector<bool> gt_used(gts.size(), false);
  auto key_of = [&](const std::vector<std::pair<std::size_t, std::size_t>>& m) {
    std::vector<double> k;
    for (auto [p, g] : m) k.push_back(vanguard::geometry::iou(preds[p], gts[g]));
    std::sort(k.rbegin(), k.rend());
    return k;
  };
  auto rec = [&](auto&& self, std::size_t p) -> void {
    if (p == preds.size()) {
      auto k = key_of(cur);
      if (k > best_key) {
        best_key = k;
        best = cur;
      }
      return;
    }
    self(self, p + 1);  // leave p unmatched
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g] || !(vanguard::geometry::iou(preds[p], gts[g]) > 0.0)) continue;
      gt_used[g] = true;
      cur.emplace_back(p, g);
      self(self, p + 1);
      cur.pop_back();
      gt_used[g] = false;
    }
  };
  rec(rec, 0);
  std::sort(best.begin(), best.end());
  return best;
}

/// 2U computed over every (positive, negative) pair: 2 per win, 1 per tie.
inline std::int64_t pairwise_twice_u(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::int64_t twice = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return twice;
}

inline std::vector<double> random_unit_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    std::vector<double> v(dim);
    double s = 0.0;
    for (auto& x : v) {
      x = n(rng);
      s += x * x;
    }
    if (s < 1e-12) continue;
    s = std::sqrt(s);
    for (auto& x : v) x /= s;
    return v;
  }
}

/// Random walk on the sphere with occasional jumps to a fresh direction.
/// Samples sit on the stride grid starting at frame 0.
struct RandomStream {
  std::vector<vanguard::scene_gate::EmbeddingSample> samples;
  std::int64_t total_frames = 0;
};

inline RandomStream random_stream(std::mt19937_64& rng, std::int64_t stride) {
  RandomStream s;
  const std::size_t dim = 2 + vanguard::uniform_index(rng, 15);
  const std::size_t n = vanguard::uniform_index(rng, 60);
  const double step = 0.05 + 0.6 * unit(rng);
  const double jump_p = 0.15 * unit(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto v = random_unit_vector(rng, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) {
      if (unit(rng) < jump_p) {
        v = random_unit_vector(rng, dim);
      } else {
        double norm = 0.0;
        for (auto& x : v) {
          x += step * noise(rng) / std::sqrt(static_cast<double>(dim));
          norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
      }
    }
    s.samples.push_back({static_cast<std::int64_t>(i) * stride, v});
  }
  const std::int64_t last = n == 0 ? 0 : s.samples.back().frame_index;
  s.total_frames = last + 1 + static_cast<std::int64_t>(vanguard::uniform_index(rng, static_cast<std::size_t>(stride)));
  return s;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path fixture_dir() { return VANGUARD_FIXTURE_DIR; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vanguard_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace vt
