#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vanguard/clients.hpp"
#include "vanguard/common.hpp"
#include "vanguard/geometry.hpp"
#include "vanguard/grounding.hpp"

namespace vanguard::cot {

struct InstructionItem {
  std::string subclip_id;
  Label label = Label::Normal;
  std::string user_prompt;
  std::string assistant_response;

  friend bool operator==(const InstructionItem&, const InstructionItem&) = default;
};

struct LabeledBox {
  std::optional<std::string> label;
  geometry::BinBox box;
  friend bool operator==(const LabeledBox&, const LabeledBox&) = default;
};

struct SkippedTuple {
  std::size_t offset = 0;
  std::string text;
  std::string reason;
};

struct ParsedCoT {
  std::string observations;
  std::string analysis;
  Label answer = Label::Normal;
  std::vector<LabeledBox> boxes;
  std::vector<SkippedTuple> skipped;
  bool has_observations = false;
  bool has_analysis = false;
};

/// Objects in canonical order: Abnormal first, then narration confidence
/// descending, then label.
std::vector<grounding::GroundedObject> canonical_order(std::span<const grounding::GroundedObject> objects);

/// One bullet per object: `- man at [247, 318, 448, 853]: "aggressive posture" (Abnormal)`,
/// or `- man: "..." (Normal)` for unboxed objects.
std::string format_object_context(const grounding::GroundedSet& grounded);

std::string build_cot_prompt(std::string_view object_context, std::string_view annotations_text,
                             Label label);

/// `DETECTED: {label} [x1, y1, x2, y2] ({event})` per boxed object, canonical order.
std::string detection_block(const grounding::GroundedSet& grounded);

struct SynthesisConfig {
  int attempts = 2;
  clients::DecodeParams decode;
};

struct SynthesisResult {
  std::optional<InstructionItem> item;
  std::optional<std::string> rejection;
  int attempts = 0;
  int retry_count = 0;
};

/// Builds the chain-of-thought prompt, asks the VLM, and assembles
/// detection block + fixed prefix + reply. A reply is accepted when it has
/// Observations and Analysis sections and ends with "Answer: {label}".
/// Transport failures propagate.
SynthesisResult synthesize(const clients::MediaRef& media, const grounding::GroundedSet& grounded,
                           std::string_view annotations_text, Label label,
                           clients::VlmClient& vlm, const SynthesisConfig& cfg = {});

/// Reason a reply is unusable, or nothing when it is fine.
std::optional<std::string> validate_reply(std::string_view reply, Label label);

/// Throws ParseError when there is no Answer section or its token is not
/// Normal/Abnormal.
ParsedCoT parse_cot(std::string_view text);

enum class Verdict { Normal, Abnormal, Unknown };
enum class VerdictProfile { KeywordPriority, First80, XmlWhich };

std::string_view to_string(Verdict v);
std::optional<VerdictProfile> parse_profile(std::string_view s);

/// Baseline-output heuristics. Total over arbitrary bytes.
Verdict parse_verdict(std::string_view text, VerdictProfile profile);

/// Fraction of windows judged Abnormal (Unknown counts as not Abnormal).
/// Empty input gives 0.
double window_score(std::span<const Verdict> verdicts);

}  // namespace vanguard::cot
