#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vanguard/common.hpp"

namespace vanguard::scene_gate {

struct EmbeddingSample {
  std::int64_t frame_index = 0;
  std::vector<double> embedding;  // unit norm
};

struct SubclipRecord {
  std::string video_id;
  std::int64_t start_frame = 0;
  std::int64_t end_frame = 0;
  Label label = Label::Normal;
  std::optional<double> boundary_similarity;  // absent for the first subclip

  /// Content-stable identifier: "<video_id>:<start>-<end>".
  std::string id() const;
  std::int64_t length() const { return end_frame - start_frame + 1; }
  friend bool operator==(const SubclipRecord&, const SubclipRecord&) = default;
};

struct GateConfig {
  std::int64_t stride = 15;
  double tau = 0.92;

  /// Throws std::invalid_argument when stride < 1 or tau outside (-1, 1).
  void validate() const;
};

/// Throws std::domain_error for zero vectors or mismatched dimensions.
double cosine(std::span<const double> a, std::span<const double> b);

/// Batch segmentation. Samples must sit exactly on frames 0, stride,
/// 2*stride, ... (std::invalid_argument otherwise). A boundary is declared at a
/// sample whose cosine to the current boundary reference falls below tau; that
/// sample becomes the new reference. Subclips carry `video_label`.
std::vector<SubclipRecord> segment(const std::string& video_id,
                                   std::span<const EmbeddingSample> stream,
                                   std::int64_t total_frames, const GateConfig& cfg,
                                   Label video_label = Label::Normal);

/// Online counterpart of segment(): emits each completed subclip as soon as
/// the boundary that closes it arrives.
class StreamingGate {
 public:
  StreamingGate(std::string video_id, GateConfig cfg, Label video_label = Label::Normal);

  /// Throws ProtocolError when frame_index does not strictly increase.
  std::optional<SubclipRecord> push(const EmbeddingSample& sample);

  /// Closes the stream; the last subclip ends at total_frames - 1. Throws
  /// ProtocolError if called twice or if total_frames does not extend past the
  /// last boundary.
  SubclipRecord finish(std::int64_t total_frames);

  std::size_t samples_seen() const { return samples_; }

 private:
  std::string video_id_;
  GateConfig cfg_;
  Label label_;
  std::vector<double> reference_;
  std::int64_t segment_start_ = 0;
  std::optional<double> segment_similarity_;
  std::optional<std::int64_t> last_frame_;
  std::size_t samples_ = 0;
  bool finished_ = false;
};

/// Frame interval [start, end] (inclusive) flagged anomalous by annotators.
struct FrameInterval {
  std::int64_t start = 0;
  std::int64_t end = 0;
};

/// Marks subclips overlapping any anomalous interval as Abnormal, others Normal.
void label_subclips(std::span<SubclipRecord> subclips, std::span<const FrameInterval> anomalous);

struct SubsamplePolicy {
  std::size_t max_per_video = 2;
  std::uint64_t seed = 42;
};

/// Per video: the longest subclip of each class present (Abnormal first), then
/// remaining slots up to max_per_video filled with Normal subclips drawn
/// uniformly without replacement. Input order of videos is preserved and each
/// video's picks are returned in temporal order.
std::vector<SubclipRecord> subsample(std::span<const std::vector<SubclipRecord>> per_video,
                                     const SubsamplePolicy& policy);

}  // namespace vanguard::scene_gate
