#pragma once

#include <map>
#include <string>
#include <string_view>

namespace vanguard::prompts {

/// Object-centric event narration. Slot: {annotations_text}.
extern const std::string_view kNarrationTemplate;

/// Chain-of-thought generation. Slots: {object_context}, {annotations_text}, {label}.
extern const std::string_view kCotTemplate;

/// Anomaly-aware question paired with every instruction item; also the
/// classifier-warmup system message.
extern const std::string_view kAnomalyQuestion;

/// System message for image-level detection samples.
extern const std::string_view kDetectionSystem;

/// User message for image-level detection samples. Slot: {labels}.
extern const std::string_view kDetectionUserTemplate;

/// System message for video-level chain-of-thought samples.
extern const std::string_view kCotSystem;

/// Prefix placed before every generated chain of thought.
inline constexpr std::string_view kCotPrefix = "Let me analyze this video.";

/// Single-pass substitution of "{name}" slots. Text inserted for one slot is
/// never rescanned, and braces that do not name a known slot are kept.
std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots);

}  // namespace vanguard::prompts
