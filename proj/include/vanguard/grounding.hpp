#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vanguard/clients.hpp"
#include "vanguard/geometry.hpp"
#include "vanguard/narration.hpp"
#include "vanguard/scene_gate.hpp"

namespace vanguard::grounding {

struct GroundedObject {
  narration::ObjectAnnotation annotation;
  std::optional<geometry::Box> box;
  std::optional<double> det_confidence;
  std::optional<std::int64_t> anchor_frame;
  std::optional<std::string> det_label;  // detector phrase that produced the box

  bool grounded() const { return box.has_value(); }
};

struct GroundedSet {
  std::string subclip_id;
  std::int64_t anchor_frame = 0;
  std::vector<GroundedObject> objects;
  std::vector<std::string> warnings;

  std::size_t grounded_count() const;
};

struct GroundingConfig {
  double box_threshold = 0.25;
  double dedup_iou = 0.5;
  double max_area_fraction = 0.5;
  std::size_t fallback_frames = 5;

  void validate() const;
};

/// The subclip's last frame followed by up to `fallback_frames` frames spaced
/// uniformly inside (start, end), latest first, without duplicates.
std::vector<std::int64_t> candidate_frames(const scene_gate::SubclipRecord& subclip,
                                           const GroundingConfig& cfg);

struct FrameGrounding {
  std::int64_t frame = 0;
  std::vector<GroundedObject> objects;  // parallel to the input annotations
  std::size_t grounded = 0;
  std::size_t dropped_by_label = 0;
  std::size_t dropped_by_area = 0;
};

/// Queries the detector once per object with {label, reason}, keeps detections
/// whose phrase matches the object label, assigns boxes by greedy
/// deduplication and then drops oversized boxes. Detector errors propagate.
FrameGrounding ground_frame(const clients::MediaRef& frame,
                            std::span<const narration::ObjectAnnotation> annotations,
                            clients::DetectorClient& detector, const GroundingConfig& cfg);

/// Evaluates candidate frames latest-first and keeps the one grounding the
/// most objects (earliest evaluated on ties). Stops early once every object is
/// grounded. Frames whose detector call fails are skipped with a warning.
GroundedSet ground_subclip(const std::string& video_uri, const scene_gate::SubclipRecord& subclip,
                           std::span<const narration::ObjectAnnotation> annotations,
                           clients::DetectorClient& detector, const GroundingConfig& cfg);

struct GroundingRate {
  std::size_t grounded = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(grounded) / total; }
};

GroundingRate grounding_rate(std::span<const GroundedSet> sets);

}  // namespace vanguard::grounding
