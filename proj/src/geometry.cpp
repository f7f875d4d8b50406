#include "vanguard/geometry.hpp"

#include "vanguard/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace vanguard::geometry {

namespace {

bool unit(double v) { return v >= 0.0 && v <= 1.0; }

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

}  // namespace

Box Box::make(double x1, double y1, double x2, double y2) {
  Box b{x1, y1, x2, y2};
  if (!b.valid()) throw std::invalid_argument("invalid box");
  return b;
}

bool Box::valid() const {
  return unit(x1) && unit(y1) && unit(x2) && unit(y2) && x1 <= x2 && y1 <= y2;
}

BinBox BinBox::make(int x1, int y1, int x2, int y2) {
  BinBox b{{x1, y1, x2, y2}};
  if (!b.in_range()) throw std::out_of_range("bin outside [0, 1000]");
  return b;
}

bool BinBox::in_range() const {
  return std::all_of(v.begin(), v.end(), [](int c) { return c >= 0 && c <= kBinScale; });
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0 || inter <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                           (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  if (enclosing <= 0.0) return 0.0;
  const double i = (uni > 0.0 && inter > 0.0) ? inter / uni : 0.0;
  return i - (enclosing - uni) / enclosing;
}

double area_fraction(const Box& b) { return std::max(0.0, b.area()); }

BinBox to_bins(const Box& b) {
  auto bin = [](double c) {
    return static_cast<int>(std::floor(c * kBinScale + 0.5));
  };
  return BinBox::make(bin(b.x1), bin(b.y1), bin(b.x2), bin(b.y2));
}

Box from_bins(const BinBox& bb) {
  if (!bb.in_range()) throw std::out_of_range("bin outside [0, 1000]");
  const double s = kBinScale;
  return Box::make(bb.v[0] / s, bb.v[1] / s, bb.v[2] / s, bb.v[3] / s);
}

bool label_match(std::string_view a, std::string_view b) {
  const std::string la = to_lower(trim(a));
  const std::string lb = to_lower(trim(b));
  if (la.empty() || lb.empty()) return false;
  return la.find(lb) != std::string::npos || lb.find(la) != std::string::npos;
}

Assignment greedy_dedup(std::span<const Candidate> candidates, std::size_t num_queries,
                        double iou_skip) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return candidates[l].detection.confidence > candidates[r].detection.confidence;
  });

  Assignment out;
  std::vector<bool> taken(num_queries, false);
  std::vector<Box> assigned;
  for (std::size_t idx : order) {
    const Candidate& c = candidates[idx];
    if (c.query >= num_queries || taken[c.query]) continue;
    const bool overlaps = std::any_of(assigned.begin(), assigned.end(), [&](const Box& b) {
      return iou(b, c.detection.box) > iou_skip;
    });
    if (overlaps) continue;
    taken[c.query] = true;
    assigned.push_back(c.detection.box);
    out.pairs.emplace_back(c.query, idx);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (std::size_t q = 0; q < num_queries; ++q) {
    if (!taken[q]) out.unmatched.push_back(q);
  }
  return out;
}

BestMatch greedy_best_match(std::span<const Box> preds, std::span<const Box> gts) {
  struct Scored {
    double iou;
    std::size_t p;
    std::size_t g;
  };
  std::vector<Scored> all;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(preds[p], gts[g]);
      if (v > 0.0) all.push_back({v, p, g});
    }
  }
  std::sort(all.begin(), all.end(), [](const Scored& l, const Scored& r) {
    if (l.iou != r.iou) return l.iou > r.iou;
    if (l.p != r.p) return l.p < r.p;
    return l.g < r.g;
  });

  BestMatch out;
  std::vector<bool> pred_used(preds.size(), false);
  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& s : all) {
    if (pred_used[s.p] || gt_used[s.g]) continue;
    pred_used[s.p] = gt_used[s.g] = true;
    out.assignment.pairs.emplace_back(s.p, s.g);
    out.ious.push_back(s.iou);
  }
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (!pred_used[p]) out.assignment.unmatched.push_back(p);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gt_used[g]) out.unmatched_gts.push_back(g);
  }
  return out;
}

HungarianResult hungarian(const std::vector<std::vector<double>>& cost) {
  HungarianResult out;
  if (cost.empty() || cost.front().empty()) return out;
  const std::size_t rows = cost.size();
  const std::size_t cols = cost.front().size();
  for (const auto& r : cost) {
    if (r.size() != cols) throw std::invalid_argument("ragged cost matrix");
    for (double c : r) {
      if (!std::isfinite(c)) throw std::invalid_argument("non-finite cost");
    }
  }

  // Shortest augmenting path with potentials; requires n <= m, so work on the
  // transpose when there are more rows than columns.
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows;
  const std::size_t m = transposed ? rows : cols;
  auto at = [&](std::size_t i, std::size_t j) {
    return transposed ? cost[j][i] : cost[i][j];
  };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based; index 0 is the virtual column.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const std::size_t r = p[j] - 1;
    const std::size_t c = j - 1;
    if (transposed) {
      out.pairs.emplace_back(c, r);
    } else {
      out.pairs.emplace_back(r, c);
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.total_cost += cost[r][c];
  return out;
}

}  // namespace vanguard::geometry
