#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vanguard/geometry.hpp"

namespace vanguard::loss {

struct LogitBatch {
  std::vector<double> logits;
  std::vector<int> labels;  // 0 or 1

  /// Throws std::invalid_argument on length mismatch, empty batch or labels
  /// outside {0, 1}.
  void validate() const;
};

/// Mean binary cross-entropy on raw logits, in the log-sum-exp form.
double bce(const LogitBatch& batch);

struct TokenBatch {
  std::vector<std::vector<double>> logits;  // [position][vocab]
  std::vector<std::size_t> targets;         // token id per position
  std::vector<bool> mask;                   // true = assistant token, counted

  void validate() const;
};

struct MaskedCe {
  double loss = 0.0;
  std::size_t positions = 0;  // 0 means the mask was empty
};

/// Sum over masked positions of -log softmax(logits)[target]. Unmasked
/// positions are never read.
MaskedCe masked_lm_ce(const TokenBatch& batch);

/// Logits over digits 0-9 for each digit position of one coordinate.
using DigitLogits = std::vector<std::array<double, 10>>;

/// Soft digit per position (softmax expectation), combined by place value
/// over the positions present and divided by 1000, clamped to [0, 1].
/// Throws std::invalid_argument unless 1 to 4 positions are given.
double soft_coordinate(const DigitLogits& positions);

/// Coordinate from the argmax digit of each position, clamped to [0, 1].
double hard_coordinate(const DigitLogits& positions);

/// Model output for one box: four coordinates (x1, y1, x2, y2) of digit logits.
struct PredictedBox {
  std::array<DigitLogits, 4> coords;
  std::string label;
};

struct TargetBox {
  std::string label;
  geometry::BinBox box;
};

/// Teacher-forced prediction together with the box it was forced toward.
struct DigitLogitBox {
  std::array<DigitLogits, 4> coords;
  geometry::BinBox target;
  std::string label;
};

struct GiouLoss {
  double loss = 0.0;
  std::vector<std::array<DigitLogits, 4>> grad;  // same shape as the predictions
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, target)
  bool no_matches = false;
};

/// Mean (1 - GIoU) over label-consistent prediction/target pairs. Pairs are
/// chosen per label by the Hungarian method on 1 - IoU of hard decodes; the
/// gradient is exact for the soft decode with those pairs held fixed.
/// Throws std::invalid_argument when `targets` is empty.
GiouLoss giou_loss(const std::vector<PredictedBox>& preds, const std::vector<TargetBox>& targets);
GiouLoss giou_loss(const std::vector<DigitLogitBox>& boxes);

struct GradientCheck {
  double max_rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  std::size_t configs = 0;
  std::size_t parameters = 0;
};

/// Central-difference comparison of giou_loss's gradient on `configs` random
/// teacher-forced box sets, skipping configurations that sit within `margin`
/// of a kink of the loss.
GradientCheck check_giou_gradient(std::size_t configs, std::uint64_t seed, double step = 1e-4,
                                  double margin = 1e-3);

/// Random teacher-forced set of 1-4 boxes with 1-3 digit targets. Returns
/// nothing when the draw lands near a kink (argmax ties, coincident edges,
/// vanishing overlap) so a finite difference would straddle it.
std::optional<std::vector<DigitLogitBox>> random_giou_case(std::mt19937_64& rng, double margin);

struct StageConfig {
  int stage = 1;
  std::string name;
  double lambda_bce = 1.0;
  double lambda_lm = 0.0;
  double lambda_giou = 0.0;
  int epochs = 1;
  double peak_lr = 1e-3;
  double warmup_ratio = 0.1;
  double detection_pct = 0.0;  // share of image-level detection samples
  double cot_pct = 0.0;        // share of video-level chain-of-thought samples

  void validate() const;
};

/// The three-stage curriculum with its published weights and schedule.
std::vector<StageConfig> curriculum_stages();

/// Classifier warmup followed by one joint stage with every loss active.
std::vector<StageConfig> joint_schedule();

double stage_loss(const StageConfig& stage, double bce_val, double lm_val, double giou_val);

/// Fraction of the cosine peak where each stage's decay ends.
inline constexpr double kCosineFloor = 0.01;

std::size_t total_steps(const StageConfig& stage, std::size_t steps_per_epoch);
std::size_t warmup_steps(const StageConfig& stage, std::size_t steps_per_epoch);

/// Learning rate at `step` (0..total_steps inclusive) of stage `stage_index`.
/// Warmup rises linearly from the previous stage's cosine endpoint (0 for the
/// first stage) to peak_lr, then cosine decay runs to peak_lr * kCosineFloor.
double lr_at(const std::vector<StageConfig>& schedule, std::size_t stage_index, std::size_t step,
             std::size_t steps_per_epoch);

}  // namespace vanguard::loss
