#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vanguard::geometry {

/// Axis-aligned box in normalized frame coordinates (fractions of width and
/// height, origin top-left). Zero-area boxes are valid.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  /// Throws std::invalid_argument unless 0 <= x1 <= x2 <= 1 and likewise for y.
  static Box make(double x1, double y1, double x2, double y2);

  bool valid() const;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Box on the integer [0, 1000] grid used in prompts and model output.
struct BinBox {
  std::array<int, 4> v{};  // x1, y1, x2, y2

  /// Throws std::out_of_range if any bin is outside [0, 1000].
  static BinBox make(int x1, int y1, int x2, int y2);

  bool in_range() const;
  friend bool operator==(const BinBox&, const BinBox&) = default;
};

inline constexpr int kBinScale = 1000;

struct Detection {
  std::string label;  // lowercase
  Box box;
  double confidence = 0.0;
};

/// One-to-one pairing of queries to detections (or predictions to ground truth).
struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, detection)
  std::vector<std::size_t> unmatched;                      // query indices
};

double iou(const Box& a, const Box& b);

/// IoU minus the fraction of the smallest enclosing box not covered by the
/// union. Returns 0 when the enclosing box has zero area.
double giou(const Box& a, const Box& b);

double area_fraction(const Box& b);

/// Scales by 1000 and rounds half up.
BinBox to_bins(const Box& b);

/// Throws std::out_of_range for bins outside [0, 1000] and
/// std::invalid_argument for inverted boxes.
Box from_bins(const BinBox& bb);

/// Case-insensitive containment in either direction after trimming.
bool label_match(std::string_view a, std::string_view b);

struct Candidate {
  std::size_t query = 0;
  Detection detection;
};

/// Confidence-ordered one-box-per-query assignment. A candidate is taken when
/// its query is still open and its IoU with every box already taken is at most
/// `iou_skip`. Ties in confidence keep input order. Pairs hold
/// (query id, candidate index); `unmatched` lists query ids in [0, num_queries)
/// that got nothing.
Assignment greedy_dedup(std::span<const Candidate> candidates, std::size_t num_queries,
                        double iou_skip = 0.5);

struct BestMatch {
  Assignment assignment;       // (pred index, gt index); unmatched = preds
  std::vector<double> ious;    // parallel to assignment.pairs
  std::vector<std::size_t> unmatched_gts;
};

/// Repeatedly takes the highest-IoU unmatched (pred, gt) pair while IoU > 0.
/// Ties go to the lower pred index, then the lower gt index.
BestMatch greedy_best_match(std::span<const Box> preds, std::span<const Box> gts);

/// Minimum-cost assignment of rows to columns for a rectangular cost matrix
/// given as rows. Every row is matched when rows <= cols, every column
/// otherwise. Throws std::invalid_argument on ragged or non-finite input.
struct HungarianResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), row-sorted
  double total_cost = 0.0;
};
HungarianResult hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace vanguard::geometry
