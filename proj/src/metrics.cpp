#include "vanguard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace vanguard::metrics {

using nlohmann::json;

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("scores and labels differ in length");
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

AucCounts mann_whitney(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  std::int64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw UndefinedMetric("ROC-AUC needs both classes");
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("NaN score");
  }

  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum with midranks: a tie block over ranks
  // [lo, hi] (1-based) gives each member rank (lo + hi) / 2.
  std::int64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const auto twice_mid = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]]) twice_rank_sum += twice_mid;
    }
    i = j + 1;
  }
  AucCounts out;
  out.twice_u = twice_rank_sum - pos * (pos + 1);
  out.pairs = pos * neg;
  return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  return mann_whitney(scores, labels).value();
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  const auto total_pos = std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; });
  if (total_pos == 0) throw UndefinedMetric("PR-AUC needs at least one positive");

  const auto idx = order_by_score_desc(scores);
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t block_tp = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      if (labels[idx[j]]) ++block_tp;
      ++j;
    }
    tp += block_tp;
    seen += j - i;
    if (block_tp > 0) {
      ap += (static_cast<double>(block_tp) / static_cast<double>(total_pos)) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    }
    i = j;
  }
  return ap;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

Prf prf_accuracy(std::span<const int> predicted, std::span<const int> labels) {
  check_lengths(predicted.size(), labels.size());
  Prf out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predicted[i] != 0, y = labels[i] != 0;
    if (p && y) ++out.tp;
    else if (p) ++out.fp;
    else if (y) ++out.fn;
    else ++out.tn;
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  out.precision = ratio(out.tp, out.tp + out.fp);
  out.recall = ratio(out.tp, out.tp + out.fn);
  out.f1 = f1_score(out.precision, out.recall);
  out.accuracy = ratio(out.tp + out.tn, labels.size());
  return out;
}

double mean_iou(std::span<const SampleBoxes> samples, bool penalize_unmatched) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto m = geometry::greedy_best_match(s.preds, s.gts);
    for (double v : m.ious) sum += v;
    count += m.ious.size();
    if (penalize_unmatched) count += m.unmatched_gts.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double recall_at(std::span<const SampleBoxes> samples, double threshold) {
  std::size_t hits = 0, total = 0;
  for (const auto& s : samples) {
    total += s.gts.size();
    const auto m = geometry::greedy_best_match(s.preds, s.gts);
    hits += static_cast<std::size_t>(
        std::count_if(m.ious.begin(), m.ious.end(), [&](double v) { return v > threshold; }));
  }
  if (total == 0) throw UndefinedMetric("recall needs at least one ground-truth box");
  return static_cast<double>(hits) / static_cast<double>(total);
}

int EvalRecord::predicted() const {
  if (verdict) return *verdict == "Abnormal" ? 1 : 0;
  return score.value_or(0.0) >= 0.5 ? 1 : 0;
}

namespace {

json boxes_json(const std::vector<geometry::Box>& boxes) {
  json arr = json::array();
  for (const auto& b : boxes) arr.push_back({b.x1, b.y1, b.x2, b.y2});
  return arr;
}

std::vector<geometry::Box> boxes_from(const json& arr, const char* field) {
  if (!arr.is_array()) throw SchemaError(std::string(field) + " must be an array");
  std::vector<geometry::Box> out;
  for (const auto& b : arr) {
    if (!b.is_array() || b.size() != 4) throw SchemaError(std::string(field) + " entries need 4 numbers");
    try {
      out.push_back(geometry::Box::make(b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                        b[3].get<double>()));
    } catch (const std::exception& e) {
      throw SchemaError(std::string(field) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

json to_json(const EvalRecord& r) {
  json j = {{"sample_id", r.sample_id}, {"label", to_string(r.label)}, {"category", r.category}};
  if (r.score) j["score"] = *r.score;
  if (r.verdict) j["verdict"] = *r.verdict;
  if (r.pred_boxes) j["pred_boxes"] = boxes_json(*r.pred_boxes);
  if (r.gt_boxes) j["gt_boxes"] = boxes_json(*r.gt_boxes);
  return j;
}

EvalRecord eval_record_from_json(const json& j) {
  if (!j.is_object()) throw SchemaError("eval record must be an object");
  EvalRecord r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    auto label = parse_label(j.at("label").get<std::string>());
    if (!label) throw SchemaError("label must be Normal or Abnormal");
    r.label = *label;
    r.category = j.value("category", std::string(to_string(r.label)));
    if (j.contains("score")) {
      r.score = j.at("score").get<double>();
      if (!(*r.score >= 0.0 && *r.score <= 1.0)) throw SchemaError("score outside [0, 1]");
    }
    if (j.contains("verdict")) r.verdict = j.at("verdict").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("eval record: ") + e.what());
  }
  if (!r.score && !r.verdict) throw SchemaError("eval record needs a score or a verdict");
  if (j.contains("pred_boxes")) r.pred_boxes = boxes_from(j["pred_boxes"], "pred_boxes");
  if (j.contains("gt_boxes")) r.gt_boxes = boxes_from(j["gt_boxes"], "gt_boxes");
  return r;
}

std::vector<CategoryRow> per_category_report(std::span<const EvalRecord> records) {
  std::map<std::string, CategoryRow> rows;
  for (const auto& r : records) {
    auto& row = rows[r.category];
    row.category = r.category;
    ++row.total;
    const bool p = r.predicted() == 1;
    if (r.label == Label::Abnormal) {
      ++(p ? row.tp : row.fn);
    } else {
      ++(p ? row.fp : row.tn);
    }
  }
  std::vector<CategoryRow> out;
  for (auto& [name, row] : rows) {
    row.normal = row.tp + row.fn == 0;
    const double total = static_cast<double>(row.total);
    row.accuracy = static_cast<double>(row.tp + row.tn) / total;
    row.recall = row.normal ? 0.0 : static_cast<double>(row.tp) / static_cast<double>(row.tp + row.fn);
    out.push_back(row);
  }
  return out;
}

EvalReport evaluate(std::span<const EvalRecord> records, const EvalOptions& options) {
  EvalReport rep;
  rep.samples = records.size();
  std::vector<double> scores;
  std::vector<int> labels, preds;
  std::vector<SampleBoxes> boxes;
  for (const auto& r : records) {
    const int y = r.label == Label::Abnormal ? 1 : 0;
    labels.push_back(y);
    preds.push_back(r.predicted());
    scores.push_back(r.score ? *r.score : static_cast<double>(r.predicted()));
    if (y == 1 && r.gt_boxes && !r.gt_boxes->empty()) {
      boxes.push_back({r.pred_boxes.value_or(std::vector<geometry::Box>{}), *r.gt_boxes});
    }
  }
  rep.prf = prf_accuracy(preds, labels);
  try {
    rep.auc = roc_auc(scores, labels);
  } catch (const UndefinedMetric&) {
  }
  try {
    rep.pr_auc = pr_auc(scores, labels);
  } catch (const UndefinedMetric&) {
  }
  rep.grounding_samples = boxes.size();
  if (!boxes.empty()) {
    rep.mean_iou = mean_iou(boxes, options.penalize_unmatched);
    rep.r_at_25 = recall_at(boxes, options.recall_iou);
  }
  rep.categories = per_category_report(records);
  return rep;
}

json to_json(const EvalReport& rep) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json cats = json::array();
  for (const auto& c : rep.categories) {
    json row = {{"category", c.category}, {"total", c.total}, {"accuracy", c.accuracy}};
    if (c.normal) {
      row["tn"] = c.tn;
      row["fp"] = c.fp;
    } else {
      row["tp"] = c.tp;
      row["fn"] = c.fn;
      row["recall"] = c.recall;
    }
    cats.push_back(row);
  }
  return {{"samples", rep.samples},
          {"auc", opt(rep.auc)},
          {"pr_auc", opt(rep.pr_auc)},
          {"accuracy", rep.prf.accuracy},
          {"precision", rep.prf.precision},
          {"recall", rep.prf.recall},
          {"f1", rep.prf.f1},
          {"confusion", {{"tp", rep.prf.tp}, {"fp", rep.prf.fp}, {"tn", rep.prf.tn}, {"fn", rep.prf.fn}}},
          {"grounding_samples", rep.grounding_samples},
          {"mean_iou", opt(rep.mean_iou)},
          {"r_at_25", opt(rep.r_at_25)},
          {"categories", cats}};
}

std::string format_report(const EvalReport& rep) {
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("--");
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  char line[256];
  std::string out;
  std::snprintf(line, sizeof line, "%-8s %-8s %-8s %-8s %-8s %-8s %-8s %-8s\n", "AUC", "PR-AUC", "Acc",
                "Prec", "Rec", "F1", "meanIoU", "R@25");
  out += line;
  std::snprintf(line, sizeof line, "%-8s %-8s %-8s %-8s %-8s %-8s %-8s %-8s\n", cell(rep.auc).c_str(),
                cell(rep.pr_auc).c_str(), cell(rep.prf.accuracy).c_str(), cell(rep.prf.precision).c_str(),
                cell(rep.prf.recall).c_str(), cell(rep.prf.f1).c_str(), cell(rep.mean_iou).c_str(),
                cell(rep.r_at_25).c_str());
  out += line;
  if (rep.categories.empty()) return out;
  out += '\n';
  std::snprintf(line, sizeof line, "%-16s %6s %-16s %8s\n", "Category", "Total", "Correct", "Accuracy");
  out += line;
  for (const auto& c : rep.categories) {
    char counts[64];
    if (c.normal) {
      std::snprintf(counts, sizeof counts, "%zu TN / %zu FP", c.tn, c.fp);
    } else {
      std::snprintf(counts, sizeof counts, "%zu TP / %zu FN", c.tp, c.fn);
    }
    std::snprintf(line, sizeof line, "%-16s %6zu %-16s %8.3f\n", c.category.c_str(), c.total, counts,
                  c.accuracy);
    out += line;
  }
  return out;
}

std::vector<double> rasterize(std::span<const ScoredInterval> intervals, std::size_t n_frames) {
  std::vector<double> out(n_frames, 0.0);
  const double n = static_cast<double>(n_frames);
  for (const auto& iv : intervals) {
    if (!(iv.start <= iv.end)) throw std::invalid_argument("interval start after end");
    const double lo = std::max(0.0, std::ceil(iv.start * n));
    const double hi = std::min(n, std::ceil(iv.end * n));  // exclusive
    for (auto i = static_cast<std::size_t>(lo); static_cast<double>(i) < hi; ++i) {
      out[i] = std::max(out[i], iv.score);
    }
  }
  return out;
}

std::vector<double> gaussian_smooth(std::span<const double> values, double sigma) {
  std::vector<double> out(values.begin(), values.end());
  if (!(sigma > 0.0) || values.empty()) return out;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
    w[static_cast<std::size_t>(k + radius)] = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
  }
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0, norm = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
      const auto j = i + k;
      if (j < 0 || j >= n) continue;
      const double wk = w[static_cast<std::size_t>(k + radius)];
      acc += wk * values[static_cast<std::size_t>(j)];
      norm += wk;
    }
    out[static_cast<std::size_t>(i)] = acc / norm;
  }
  return out;
}

std::vector<double> interval_to_frame_scores(std::span<const ScoredInterval> intervals,
                                             std::size_t n_frames, std::optional<double> sigma) {
  const double s = sigma.value_or(0.02 * static_cast<double>(n_frames));
  auto out = gaussian_smooth(rasterize(intervals, n_frames), s);
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace vanguard::metrics
