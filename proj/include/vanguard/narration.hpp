#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vanguard/clients.hpp"
#include "vanguard/common.hpp"
#include "vanguard/scene_gate.hpp"

namespace vanguard::narration {

struct ObjectAnnotation {
  Label event = Label::Normal;
  std::string reason;
  std::string label;  // lowercase, non-empty
  double confidence = 0.0;

  friend bool operator==(const ObjectAnnotation&, const ObjectAnnotation&) = default;
};

struct Rejection {
  std::size_t index = 0;  // position in the response array
  std::string reason;
};

struct ParsedNarration {
  std::vector<ObjectAnnotation> accepted;
  std::vector<Rejection> rejected;
};

std::string build_narration_prompt(std::string_view annotations_text);

/// Extracts the JSON array from a narrator reply. Code fences and text around
/// the array are ignored. Items failing the annotation invariants are reported
/// in `rejected` instead of failing the parse. Throws ParseError (with a byte
/// offset into `response`) when no array can be parsed.
ParsedNarration parse_narration(std::string_view response);

/// JSON array in the narrator's output schema; parse_narration inverts it.
std::string serialize(std::span<const ObjectAnnotation> objects);

nlohmann::json to_json(const ObjectAnnotation& a);
/// Throws SchemaError.
ObjectAnnotation annotation_from_json(const nlohmann::json& j);

/// One temporal annotation sentence, in seconds from the start of the video.
struct AnnotationSentence {
  std::string video_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string text;
};

/// Sentences overlapping the subclip's time span, one per line as
/// "[start s - end s] text". A sentence is kept when the overlap is positive
/// and covers at least `min_overlap_fraction` of the sentence.
std::string align_annotations(std::span<const AnnotationSentence> sentences,
                              const scene_gate::SubclipRecord& subclip, double fps,
                              double min_overlap_fraction = 0.0);

struct NarrationConfig {
  int parse_attempts = 2;  // generations tried before flagging as unparseable
  clients::DecodeParams decode;
};

struct NarrationResult {
  std::string subclip_id;
  std::vector<ObjectAnnotation> objects;
  std::vector<Rejection> rejected;
  std::optional<std::string> flag;  // "no_objects", "unparseable"
  std::string prompt_sha256;
  std::string response;  // last raw reply
  int retry_count = 0;   // transport retries summed over attempts
  int attempts = 0;
};

/// Builds the prompt, calls the narrator and parses the reply. Transport
/// failures propagate as clients::TransportError.
NarrationResult narrate_subclip(const clients::MediaRef& media, const std::string& subclip_id,
                                std::string_view annotations_text, clients::VlmClient& vlm,
                                const NarrationConfig& cfg = {});

}  // namespace vanguard::narration
