#include "vanguard/scene_gate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vanguard::scene_gate {

std::string SubclipRecord::id() const {
  return video_id + ":" + std::to_string(start_frame) + "-" + std::to_string(end_frame);
}

void GateConfig::validate() const {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  if (!(tau > -1.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (-1, 1)");
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::domain_error("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<SubclipRecord> segment(const std::string& video_id,
                                   std::span<const EmbeddingSample> stream,
                                   std::int64_t total_frames, const GateConfig& cfg,
                                   Label video_label) {
  cfg.validate();
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (stream[i].frame_index != static_cast<std::int64_t>(i) * cfg.stride) {
      throw std::invalid_argument("segment: sample " + std::to_string(i) +
                                  " is not on the stride grid");
    }
  }
  const std::int64_t last_sample = stream.empty() ? 0 : stream.back().frame_index;
  if (total_frames < 1 || total_frames <= last_sample) {
    throw std::invalid_argument("segment: total_frames does not cover the stream");
  }

  std::vector<SubclipRecord> out;
  std::size_t reference = 0;
  std::int64_t start = 0;
  std::optional<double> similarity;
  for (std::size_t i = 1; i < stream.size(); ++i) {
    const double c = cosine(stream[i].embedding, stream[reference].embedding);
    if (c < cfg.tau) {
      out.push_back({video_id, start, stream[i].frame_index - 1, video_label, similarity});
      start = stream[i].frame_index;
      similarity = c;
      reference = i;
    }
  }
  out.push_back({video_id, start, total_frames - 1, video_label, similarity});
  return out;
}

StreamingGate::StreamingGate(std::string video_id, GateConfig cfg, Label video_label)
    : video_id_(std::move(video_id)), cfg_(cfg), label_(video_label) {
  cfg_.validate();
}

std::optional<SubclipRecord> StreamingGate::push(const EmbeddingSample& sample) {
  if (finished_) throw ProtocolError("push after finish");
  if (last_frame_ && sample.frame_index <= *last_frame_) {
    throw ProtocolError("frame_index " + std::to_string(sample.frame_index) +
                        " does not follow " + std::to_string(*last_frame_));
  }
  if (!last_frame_ && sample.frame_index < 0) throw ProtocolError("negative frame_index");
  last_frame_ = sample.frame_index;
  ++samples_;

  if (reference_.empty()) {
    reference_ = sample.embedding;
    return std::nullopt;
  }
  const double c = cosine(sample.embedding, reference_);
  if (c >= cfg_.tau) return std::nullopt;

  SubclipRecord done{video_id_, segment_start_, sample.frame_index - 1, label_,
                     segment_similarity_};
  reference_ = sample.embedding;
  segment_start_ = sample.frame_index;
  segment_similarity_ = c;
  return done;
}

SubclipRecord StreamingGate::finish(std::int64_t total_frames) {
  if (finished_) throw ProtocolError("finish called twice");
  if (total_frames < 1 || (last_frame_ && total_frames <= *last_frame_)) {
    throw ProtocolError("total_frames does not cover the stream");
  }
  finished_ = true;
  return {video_id_, segment_start_, total_frames - 1, label_, segment_similarity_};
}

void label_subclips(std::span<SubclipRecord> subclips, std::span<const FrameInterval> anomalous) {
  for (auto& s : subclips) {
    const bool hit = std::any_of(anomalous.begin(), anomalous.end(), [&](const FrameInterval& iv) {
      return iv.start <= s.end_frame && iv.end >= s.start_frame;
    });
    s.label = hit ? Label::Abnormal : Label::Normal;
  }
}

namespace {

// Longest first; earlier start on equal length.
std::optional<std::size_t> longest_of(const std::vector<SubclipRecord>& v, Label l,
                                      const std::vector<bool>& used) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (used[i] || v[i].label != l) continue;
    if (!best || v[i].length() > v[*best].length()) best = i;
  }
  return best;
}

}  // namespace

std::vector<SubclipRecord> subsample(std::span<const std::vector<SubclipRecord>> per_video,
                                     const SubsamplePolicy& policy) {
  std::vector<SubclipRecord> out;
  for (const auto& clips : per_video) {
    if (clips.empty() || policy.max_per_video == 0) continue;
    std::vector<bool> used(clips.size(), false);
    std::vector<std::size_t> picked;
    for (Label l : {Label::Abnormal, Label::Normal}) {
      if (picked.size() >= policy.max_per_video) break;
      if (auto i = longest_of(clips, l, used)) {
        used[*i] = true;
        picked.push_back(*i);
      }
    }

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (!used[i] && clips[i].label == Label::Normal) pool.push_back(i);
    }
    std::mt19937_64 rng(fnv1a(clips.front().video_id, policy.seed ^ 0x9e3779b97f4a7c15ULL));
    while (picked.size() < policy.max_per_video && !pool.empty()) {
      const std::size_t k = uniform_index(rng, pool.size());
      picked.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }

    std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
      return clips[a].start_frame < clips[b].start_frame;
    });
    for (std::size_t i : picked) out.push_back(clips[i]);
  }
  return out;
}

}  // namespace vanguard::scene_gate
