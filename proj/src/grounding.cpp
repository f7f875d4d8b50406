#include "vanguard/grounding.hpp"

#include <algorithm>
#include <stdexcept>

namespace vanguard::grounding {

std::size_t GroundedSet::grounded_count() const {
  return static_cast<std::size_t>(
      std::count_if(objects.begin(), objects.end(), [](const auto& o) { return o.grounded(); }));
}

void GroundingConfig::validate() const {
  if (!(box_threshold >= 0.0 && box_threshold <= 1.0)) {
    throw std::invalid_argument("box_threshold must lie in [0, 1]");
  }
  if (!(dedup_iou > 0.0 && dedup_iou <= 1.0)) throw std::invalid_argument("dedup_iou must lie in (0, 1]");
  if (!(max_area_fraction > 0.0 && max_area_fraction <= 1.0)) {
    throw std::invalid_argument("max_area_fraction must lie in (0, 1]");
  }
}

std::vector<std::int64_t> candidate_frames(const scene_gate::SubclipRecord& subclip,
                                           const GroundingConfig& cfg) {
  if (subclip.end_frame < subclip.start_frame) throw std::invalid_argument("inverted subclip");
  const std::int64_t start = subclip.start_frame;
  const std::int64_t end = subclip.end_frame;
  std::vector<std::int64_t> out{end};
  const auto n = static_cast<std::int64_t>(cfg.fallback_frames);
  const std::int64_t span = end - start;
  for (std::int64_t k = n; k >= 1; --k) {
    // start + round_half_up(k * span / (n + 1)), in integers
    const std::int64_t f = start + (2 * k * span + (n + 1)) / (2 * (n + 1));
    if (f <= start || f >= end) continue;
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
  }
  return out;
}

FrameGrounding ground_frame(const clients::MediaRef& frame,
                            std::span<const narration::ObjectAnnotation> annotations,
                            clients::DetectorClient& detector, const GroundingConfig& cfg) {
  FrameGrounding out;
  out.frame = frame.frame_index.value_or(0);
  out.objects.resize(annotations.size());
  for (std::size_t i = 0; i < annotations.size(); ++i) out.objects[i].annotation = annotations[i];

  std::vector<geometry::Candidate> pooled;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    auto resp = detector.detect({frame, {a.label, a.reason}, cfg.box_threshold});
    for (auto& d : resp.detections) {
      // Hits from the reason query survive only if their phrase names the object.
      if (!geometry::label_match(d.detection.label, a.label)) {
        ++out.dropped_by_label;
        continue;
      }
      pooled.push_back({i, std::move(d.detection)});
    }
  }

  const auto assignment = geometry::greedy_dedup(pooled, annotations.size(), cfg.dedup_iou);
  for (const auto& [obj, cand] : assignment.pairs) {
    const auto& det = pooled[cand].detection;
    if (geometry::area_fraction(det.box) > cfg.max_area_fraction) {
      ++out.dropped_by_area;
      continue;
    }
    auto& g = out.objects[obj];
    g.box = det.box;
    g.det_confidence = det.confidence;
    g.anchor_frame = out.frame;
    g.det_label = det.label;
    ++out.grounded;
  }
  return out;
}

GroundedSet ground_subclip(const std::string& video_uri, const scene_gate::SubclipRecord& subclip,
                           std::span<const narration::ObjectAnnotation> annotations,
                           clients::DetectorClient& detector, const GroundingConfig& cfg) {
  cfg.validate();
  GroundedSet out;
  out.subclip_id = subclip.id();
  out.anchor_frame = subclip.end_frame;
  out.objects.reserve(annotations.size());
  for (const auto& a : annotations) out.objects.push_back({a, {}, {}, {}, {}});
  if (annotations.empty()) return out;

  std::optional<FrameGrounding> best;
  for (std::int64_t f : candidate_frames(subclip, cfg)) {
    clients::MediaRef ref{video_uri, f, {}, {}};
    FrameGrounding fg;
    try {
      fg = ground_frame(ref, annotations, detector, cfg);
    } catch (const std::exception& e) {
      out.warnings.push_back("frame " + std::to_string(f) + " skipped: " + e.what());
      continue;
    }
    if (!best || fg.grounded > best->grounded) best = std::move(fg);
    if (best->grounded == annotations.size()) break;
  }
  if (best) {
    out.anchor_frame = best->frame;
    out.objects = std::move(best->objects);
  }
  return out;
}

GroundingRate grounding_rate(std::span<const GroundedSet> sets) {
  GroundingRate r;
  for (const auto& s : sets) {
    r.total += s.objects.size();
    r.grounded += s.grounded_count();
  }
  return r;
}

}  // namespace vanguard::grounding
