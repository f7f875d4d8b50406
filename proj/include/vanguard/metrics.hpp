#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vanguard/common.hpp"
#include "vanguard/geometry.hpp"

namespace vanguard::metrics {

/// Twice the Mann-Whitney U statistic of the positives, kept as an integer so
/// that tie handling is exact.
struct AucCounts {
  std::int64_t twice_u = 0;
  std::int64_t pairs = 0;  // positives * negatives
  double value() const { return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pairs)); }
};

/// Throws UndefinedMetric unless both classes are present.
AucCounts mann_whitney(std::span<const double> scores, std::span<const int> labels);
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Step-wise average precision with tied scores treated as one threshold.
/// Throws UndefinedMetric when there are no positives.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct Prf {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;     // 0 when there are no positives
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// Positive class is 1 (Abnormal).
Prf prf_accuracy(std::span<const int> predicted, std::span<const int> labels);

/// Harmonic mean; 0 when both inputs are 0.
double f1_score(double precision, double recall);

struct SampleBoxes {
  std::vector<geometry::Box> preds;
  std::vector<geometry::Box> gts;
};

/// Mean IoU over greedy best-match pairs pooled across samples. With
/// `penalize_unmatched`, every unmatched ground-truth box adds an IoU of 0 to
/// the pool. An empty pool gives 0.
double mean_iou(std::span<const SampleBoxes> samples, bool penalize_unmatched = true);

/// Fraction of ground-truth boxes whose greedy match has IoU > threshold.
/// Throws UndefinedMetric when there are no ground-truth boxes.
double recall_at(std::span<const SampleBoxes> samples, double threshold = 0.25);

struct EvalRecord {
  std::string sample_id;
  Label label = Label::Normal;
  std::optional<double> score;        // P(Abnormal)
  std::optional<std::string> verdict;  // "Normal", "Abnormal" or anything else (= Unknown)
  std::optional<std::vector<geometry::Box>> pred_boxes;
  std::optional<std::vector<geometry::Box>> gt_boxes;
  std::string category;

  /// Unknown verdicts count as Normal; without a verdict the score is
  /// thresholded at 0.5.
  int predicted() const;
};

nlohmann::json to_json(const EvalRecord& r);
/// Throws SchemaError.
EvalRecord eval_record_from_json(const nlohmann::json& j);

struct CategoryRow {
  std::string category;
  std::size_t total = 0;
  std::size_t tp = 0, fn = 0;  // abnormal categories
  std::size_t tn = 0, fp = 0;  // normal category
  double accuracy = 0.0;
  double recall = 0.0;  // abnormal categories only
  bool normal = false;
};

/// One row per non-empty category, sorted by name. A category is Normal when
/// all its records are labelled Normal.
std::vector<CategoryRow> per_category_report(std::span<const EvalRecord> records);

struct EvalOptions {
  bool penalize_unmatched = true;
  double recall_iou = 0.25;
};

struct EvalReport {
  std::optional<double> auc;
  std::optional<double> pr_auc;
  Prf prf;
  std::optional<double> mean_iou;
  std::optional<double> r_at_25;
  std::size_t samples = 0;
  std::size_t grounding_samples = 0;
  std::vector<CategoryRow> categories;
};

/// Classification metrics over all records; grounding metrics over Abnormal
/// records carrying ground-truth boxes. Undefined metrics are left empty.
EvalReport evaluate(std::span<const EvalRecord> records, const EvalOptions& options = {});

nlohmann::json to_json(const EvalReport& report);
/// Aligned text tables: the summary row and the per-category breakdown.
std::string format_report(const EvalReport& report);

struct ScoredInterval {
  double start = 0.0;  // fraction of the video
  double end = 0.0;
  double score = 0.0;
};

/// Frame i is covered by an interval when start*n <= i < end*n; overlapping
/// intervals take the maximum score.
std::vector<double> rasterize(std::span<const ScoredInterval> intervals, std::size_t n_frames);

/// Gaussian smoothing with the kernel truncated at ceil(4 sigma) and
/// renormalized over the frames that exist. sigma <= 0 returns the input.
std::vector<double> gaussian_smooth(std::span<const double> values, double sigma);

/// rasterize + gaussian_smooth, clamped to [0, 1]. Without sigma, 2% of the
/// frame count is used.
std::vector<double> interval_to_frame_scores(std::span<const ScoredInterval> intervals,
                                             std::size_t n_frames,
                                             std::optional<double> sigma = std::nullopt);

}  // namespace vanguard::metrics
