#include "vanguard/loss.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "vanguard/common.hpp"

namespace vanguard::loss {

void LogitBatch::validate() const {
  if (logits.empty()) throw std::invalid_argument("empty logit batch");
  if (logits.size() != labels.size()) throw std::invalid_argument("logits and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

namespace {

constexpr double kBinScaleD = geometry::kBinScale;

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Numerically stable softmax of one digit position.
std::array<double, 10> softmax(const std::array<double, 10>& l) {
  const double m = *std::max_element(l.begin(), l.end());
  std::array<double, 10> p{};
  double z = 0.0;
  for (int d = 0; d < 10; ++d) z += p[d] = std::exp(l[d] - m);
  for (auto& x : p) x /= z;
  return p;
}

}  // namespace

double bce(const LogitBatch& batch) {
  batch.validate();
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.logits.size(); ++i) {
    // -log s(l) = softplus(-l), -log(1 - s(l)) = softplus(l); no cancellation
    const double l = batch.logits[i];
    sum += batch.labels[i] ? softplus(-l) : softplus(l);
  }
  return sum / static_cast<double>(batch.logits.size());
}

void TokenBatch::validate() const {
  if (logits.size() != targets.size() || logits.size() != mask.size()) {
    throw std::invalid_argument("token batch fields differ in length");
  }
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (!mask[t]) continue;
    if (logits[t].empty()) throw std::invalid_argument("empty vocabulary");
    if (targets[t] >= logits[t].size()) throw std::invalid_argument("target outside vocabulary");
  }
}

MaskedCe masked_lm_ce(const TokenBatch& batch) {
  batch.validate();
  MaskedCe out;
  for (std::size_t t = 0; t < batch.logits.size(); ++t) {
    if (!batch.mask[t]) continue;
    const auto& row = batch.logits[t];
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double l : row) z += std::exp(l - m);
    out.loss += m + std::log(z) - row[batch.targets[t]];
    ++out.positions;
  }
  return out;
}

namespace {

struct SoftCoord {
  double value = 0.0;
  DigitLogits grad;  // d value / d logit
};

void check_positions(const DigitLogits& positions) {
  if (positions.empty() || positions.size() > 4) {
    throw std::invalid_argument("a coordinate needs 1 to 4 digit positions");
  }
}

SoftCoord soft_with_grad(const DigitLogits& positions) {
  check_positions(positions);
  const std::size_t n = positions.size();
  SoftCoord out;
  out.grad.resize(n);
  std::vector<std::array<double, 10>> probs(n);
  std::vector<double> soft(n, 0.0);
  double raw = 0.0;
  double place = std::pow(10.0, static_cast<double>(n - 1));
  std::vector<double> weight(n);
  for (std::size_t k = 0; k < n; ++k) {
    probs[k] = softmax(positions[k]);
    for (int d = 0; d < 10; ++d) soft[k] += probs[k][d] * d;
    weight[k] = place / kBinScaleD;
    raw += weight[k] * soft[k];
    place /= 10.0;
  }
  out.value = std::clamp(raw, 0.0, 1.0);
  const bool clamped = raw > 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    for (int d = 0; d < 10; ++d) {
      // softmax Jacobian applied to the digit values: p_d (d - s_k)
      out.grad[k][d] = clamped ? 0.0 : weight[k] * probs[k][d] * (d - soft[k]);
    }
  }
  return out;
}

}  // namespace

double soft_coordinate(const DigitLogits& positions) { return soft_with_grad(positions).value; }

double hard_coordinate(const DigitLogits& positions) {
  check_positions(positions);
  double v = 0.0;
  for (const auto& row : positions) {
    v = v * 10.0 + static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return std::clamp(v / kBinScaleD, 0.0, 1.0);
}

namespace {

geometry::Box ordered_box(double a, double b, double c, double d) {
  return geometry::Box::make(std::min(a, c), std::min(b, d), std::max(a, c), std::max(b, d));
}

geometry::Box hard_box(const PredictedBox& p) {
  return ordered_box(hard_coordinate(p.coords[0]), hard_coordinate(p.coords[1]),
                     hard_coordinate(p.coords[2]), hard_coordinate(p.coords[3]));
}

struct GiouGrad {
  double value = 0.0;
  std::array<double, 4> d{};  // w.r.t. x1, y1, x2, y2 of the ordered prediction
};

GiouGrad giou_with_grad(const std::array<double, 4>& p, const geometry::Box& g) {
  const double px1 = p[0], py1 = p[1], px2 = p[2], py2 = p[3];
  const double iw = std::min(px2, g.x2) - std::max(px1, g.x1);
  const double ih = std::min(py2, g.y2) - std::max(py1, g.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double pw = px2 - px1, ph = py2 - py1;
  const double uni = pw * ph + g.area() - inter;
  const double cw = std::max(px2, g.x2) - std::min(px1, g.x1);
  const double ch = std::max(py2, g.y2) - std::min(py1, g.y1);
  const double enc = cw * ch;

  GiouGrad out;
  if (enc <= 0.0) return out;
  if (uni <= 0.0) {
    out.value = -1.0;
    return out;
  }
  out.value = inter / uni - (enc - uni) / enc;

  const std::array<double, 4> d_area = {-ph, -pw, ph, pw};
  const std::array<double, 4> d_inter = {
      overlap && px1 > g.x1 ? -ih : 0.0,
      overlap && py1 > g.y1 ? -iw : 0.0,
      overlap && px2 < g.x2 ? ih : 0.0,
      overlap && py2 < g.y2 ? iw : 0.0,
  };
  const std::array<double, 4> d_enc = {
      px1 < g.x1 ? -ch : 0.0,
      py1 < g.y1 ? -cw : 0.0,
      px2 > g.x2 ? ch : 0.0,
      py2 > g.y2 ? cw : 0.0,
  };
  // GIoU = I/U - 1 + U/C
  for (int k = 0; k < 4; ++k) {
    const double d_uni = d_area[k] - d_inter[k];
    out.d[k] = d_inter[k] / uni - inter * d_uni / (uni * uni) + d_uni / enc -
               uni * d_enc[k] / (enc * enc);
  }
  return out;
}

std::string label_key(const std::string& s) { return to_lower(trim(s)); }

}  // namespace

GiouLoss giou_loss(const std::vector<PredictedBox>& preds, const std::vector<TargetBox>& targets) {
  if (targets.empty()) throw std::invalid_argument("giou_loss needs at least one target box");

  GiouLoss out;
  out.grad.resize(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c = 0; c < 4; ++c) {
      check_positions(preds[i].coords[c]);
      out.grad[i][c].assign(preds[i].coords[c].size(), std::array<double, 10>{});
    }
  }

  std::vector<geometry::Box> target_boxes;
  target_boxes.reserve(targets.size());
  for (const auto& t : targets) target_boxes.push_back(geometry::from_bins(t.box));

  std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < preds.size(); ++i) groups[label_key(preds[i].label)].first.push_back(i);
  for (std::size_t j = 0; j < targets.size(); ++j) groups[label_key(targets[j].label)].second.push_back(j);

  for (const auto& [label, members] : groups) {
    const auto& [pi, ti] = members;
    if (pi.empty() || ti.empty()) continue;
    std::vector<std::vector<double>> cost(pi.size(), std::vector<double>(ti.size()));
    for (std::size_t r = 0; r < pi.size(); ++r) {
      const auto hb = hard_box(preds[pi[r]]);
      for (std::size_t c = 0; c < ti.size(); ++c) cost[r][c] = 1.0 - geometry::iou(hb, target_boxes[ti[c]]);
    }
    for (const auto& [r, c] : geometry::hungarian(cost).pairs) out.pairs.emplace_back(pi[r], ti[c]);
  }
  std::sort(out.pairs.begin(), out.pairs.end());

  if (out.pairs.empty()) {
    out.no_matches = true;
    return out;
  }
  const double inv_m = 1.0 / static_cast<double>(out.pairs.size());

  for (const auto& [i, j] : out.pairs) {
    std::array<SoftCoord, 4> sc;
    for (int c = 0; c < 4; ++c) sc[c] = soft_with_grad(preds[i].coords[c]);
    // Order the prediction; remember which raw coordinate feeds each side.
    const int lx = sc[0].value <= sc[2].value ? 0 : 2;
    const int ly = sc[1].value <= sc[3].value ? 1 : 3;
    const std::array<int, 4> src = {lx, ly, 2 - lx, 4 - ly};
    const std::array<double, 4> p = {sc[src[0]].value, sc[src[1]].value, sc[src[2]].value,
                                     sc[src[3]].value};
    const auto g = giou_with_grad(p, target_boxes[j]);
    out.loss += (1.0 - g.value) * inv_m;
    for (int k = 0; k < 4; ++k) {
      const double upstream = -g.d[k] * inv_m;
      if (upstream == 0.0) continue;
      auto& dst = out.grad[i][src[k]];
      const auto& local = sc[src[k]].grad;
      for (std::size_t pos = 0; pos < local.size(); ++pos) {
        for (int d = 0; d < 10; ++d) dst[pos][d] += upstream * local[pos][d];
      }
    }
  }
  return out;
}

GiouLoss giou_loss(const std::vector<DigitLogitBox>& boxes) {
  std::vector<PredictedBox> preds;
  std::vector<TargetBox> targets;
  preds.reserve(boxes.size());
  targets.reserve(boxes.size());
  for (const auto& b : boxes) {
    preds.push_back({b.coords, b.label});
    targets.push_back({b.label, b.target});
  }
  return giou_loss(preds, targets);
}

namespace {

double normal(std::mt19937_64& rng) {
  double u1 = uniform_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * uniform_unit(rng));
}

std::vector<int> digits_of(int v) {
  std::vector<int> out;
  const std::string s = std::to_string(v);
  for (char c : s) out.push_back(c - '0');
  return out;
}

bool far(double a, double b, double margin) { return std::abs(a - b) >= margin; }

}  // namespace

std::optional<std::vector<DigitLogitBox>> random_giou_case(std::mt19937_64& rng, double margin) {
  static const std::array<const char*, 2> kLabels = {"man", "car"};
  const std::size_t n = 1 + uniform_index(rng, 4);
  std::vector<DigitLogitBox> boxes(n);
  for (auto& b : boxes) {
    b.label = kLabels[uniform_index(rng, kLabels.size())];
    const int x1 = static_cast<int>(uniform_index(rng, 900));
    const int y1 = static_cast<int>(uniform_index(rng, 900));
    const int x2 = x1 + 20 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(979 - x1)));
    const int y2 = y1 + 20 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(979 - y1)));
    b.target = geometry::BinBox::make(x1, y1, std::min(x2, 999), std::min(y2, 999));
    for (int c = 0; c < 4; ++c) {
      for (int digit : digits_of(b.target.v[c])) {
        const int favored = uniform_unit(rng) < 0.7 ? digit : static_cast<int>(uniform_index(rng, 10));
        std::array<double, 10> row{};
        for (int d = 0; d < 10; ++d) row[d] = normal(rng) + (d == favored ? 3.0 : 0.0);
        std::array<double, 10> sorted = row;
        std::sort(sorted.begin(), sorted.end());
        if (sorted[9] - sorted[8] < 10.0 * margin) return std::nullopt;
        b.coords[c].push_back(row);
      }
    }
  }

  const auto result = giou_loss(boxes);
  for (const auto& [i, j] : result.pairs) {
    std::array<double, 4> s;
    for (int c = 0; c < 4; ++c) s[c] = soft_coordinate(boxes[i].coords[c]);
    if (!far(s[0], s[2], margin) || !far(s[1], s[3], margin)) return std::nullopt;
    const auto p = ordered_box(s[0], s[1], s[2], s[3]);
    const auto g = geometry::from_bins(boxes[j].target);
    if (!far(p.x1, g.x1, margin) || !far(p.x2, g.x2, margin) || !far(p.y1, g.y1, margin) ||
        !far(p.y2, g.y2, margin)) {
      return std::nullopt;
    }
    const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
    const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
    if (std::abs(iw) < margin || std::abs(ih) < margin) return std::nullopt;
  }
  return boxes;
}

GradientCheck check_giou_gradient(std::size_t configs, std::uint64_t seed, double step, double margin) {
  std::mt19937_64 rng(seed);
  GradientCheck out;
  while (out.configs < configs) {
    auto sample = random_giou_case(rng, margin);
    if (!sample) continue;
    auto boxes = std::move(*sample);
    const auto analytic = giou_loss(boxes);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      for (int c = 0; c < 4; ++c) {
        for (std::size_t pos = 0; pos < boxes[i].coords[c].size(); ++pos) {
          for (int d = 0; d < 10; ++d) {
            double& x = boxes[i].coords[c][pos][d];
            const double saved = x;
            x = saved + step;
            const double up = giou_loss(boxes).loss;
            x = saved - step;
            const double down = giou_loss(boxes).loss;
            x = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.grad[i][c][pos][d];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            out.max_abs_error = std::max(out.max_abs_error, std::abs(a - numeric));
            ++out.parameters;
          }
        }
      }
    }
    const double scale = std::sqrt(std::max(a2, n2));
    if (scale > 0.0) out.max_rel_error = std::max(out.max_rel_error, std::sqrt(diff2) / scale);
    ++out.configs;
  }
  return out;
}

void StageConfig::validate() const {
  if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
  for (double l : {lambda_bce, lambda_lm, lambda_giou}) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw std::invalid_argument("peak_lr must be > 0");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw std::invalid_argument("warmup_ratio must lie in [0, 1)");
  if (!(detection_pct >= 0.0 && cot_pct >= 0.0 && detection_pct + cot_pct <= 100.0)) {
    throw std::invalid_argument("mixture percentages must be >= 0 and sum to at most 100");
  }
}

std::vector<StageConfig> curriculum_stages() {
  return {
      {1, "classifier_warmup", 1.0, 0.0, 0.0, 2, 1e-3, 0.1, 0.0, 0.0},
      {2, "spatial_grounding", 1.0, 0.5, 1.0, 3, 5e-4, 0.05, 80.0, 20.0},
      {3, "cot_finetune", 1.0, 0.5, 0.0, 3, 5e-4, 0.05, 0.0, 100.0},
  };
}

std::vector<StageConfig> joint_schedule() {
  auto s = curriculum_stages();
  return {s[0], {2, "joint", 1.0, 0.5, 1.0, 3, 5e-4, 0.05, 50.0, 50.0}};
}

double stage_loss(const StageConfig& stage, double bce_val, double lm_val, double giou_val) {
  double total = stage.lambda_bce * bce_val;
  // A zero weight drops the term even when its value is not finite.
  if (stage.lambda_lm != 0.0) total += stage.lambda_lm * lm_val;
  if (stage.lambda_giou != 0.0) total += stage.lambda_giou * giou_val;
  return total;
}

std::size_t total_steps(const StageConfig& stage, std::size_t steps_per_epoch) {
  return static_cast<std::size_t>(stage.epochs) * steps_per_epoch;
}

std::size_t warmup_steps(const StageConfig& stage, std::size_t steps_per_epoch) {
  return static_cast<std::size_t>(std::ceil(stage.warmup_ratio * static_cast<double>(total_steps(stage, steps_per_epoch))));
}

double lr_at(const std::vector<StageConfig>& schedule, std::size_t stage_index, std::size_t step,
             std::size_t steps_per_epoch) {
  if (stage_index >= schedule.size()) throw std::out_of_range("stage index outside the schedule");
  if (steps_per_epoch == 0) throw std::invalid_argument("steps_per_epoch must be >= 1");
  const auto& s = schedule[stage_index];
  const std::size_t total = total_steps(s, steps_per_epoch);
  if (step > total) throw std::out_of_range("step beyond the end of the stage");
  const std::size_t warm = warmup_steps(s, steps_per_epoch);
  const double floor = s.peak_lr * kCosineFloor;

  if (step < warm) {
    const double start = stage_index == 0 ? 0.0 : schedule[stage_index - 1].peak_lr * kCosineFloor;
    return std::lerp(start, s.peak_lr, static_cast<double>(step) / static_cast<double>(warm));
  }
  const double progress =
      total == warm ? 1.0 : static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return std::lerp(floor, s.peak_lr, 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace vanguard::loss
