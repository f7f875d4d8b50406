#include "vanguard/narration.hpp"

#include <algorithm>
#include <cstdio>

#include "vanguard/prompts.hpp"

namespace vanguard::narration {

using nlohmann::json;

std::string build_narration_prompt(std::string_view annotations_text) {
  return prompts::fill(prompts::kNarrationTemplate,
                       {{"annotations_text", std::string(annotations_text)}});
}

namespace {

std::optional<std::string> check_item(const json& item, ObjectAnnotation& out) {
  if (!item.is_object()) return "not an object";
  auto str = [&](const char* key) -> const json* {
    auto it = item.find(key);
    return (it != item.end() && it->is_string()) ? &*it : nullptr;
  };
  const json* event = str("Event");
  if (!event) return "missing Event";
  auto label = parse_label(event->get<std::string>());
  if (!label) return "Event must be Normal or Abnormal";
  const json* reason = str("Reason");
  if (!reason) return "missing Reason";
  const json* name = str("label");
  if (!name) return "missing label";
  std::string lowered = to_lower(trim(name->get<std::string>()));
  if (lowered.empty()) return "empty label";
  auto conf = item.find("confidence");
  if (conf == item.end() || !conf->is_number()) return "missing confidence";
  const double c = conf->get<double>();
  if (!(c >= 0.0 && c <= 1.0)) return "confidence outside [0, 1]";

  out = {*label, reason->get<std::string>(), std::move(lowered), c};
  return std::nullopt;
}

}  // namespace

ParsedNarration parse_narration(std::string_view response) {
  const auto last = response.rfind(']');
  const auto first = response.find('[');
  if (first == std::string_view::npos || last == std::string_view::npos || last < first) {
    throw ParseError("no JSON array in response", first == std::string_view::npos ? 0 : first);
  }

  json array;
  std::optional<ParseError> first_error;
  for (auto start = first; start != std::string_view::npos && start < last;
       start = response.find('[', start + 1)) {
    try {
      array = json::parse(response.substr(start, last - start + 1));
      first_error.reset();
      break;
    } catch (const json::parse_error& e) {
      if (!first_error) {
        first_error.emplace(std::string("invalid JSON array: ") + e.what(),
                            start + (e.byte > 0 ? e.byte - 1 : 0));
      }
    }
  }
  if (first_error) throw *first_error;
  if (!array.is_array()) throw ParseError("response is not a JSON array", first);

  ParsedNarration out;
  for (std::size_t i = 0; i < array.size(); ++i) {
    ObjectAnnotation a;
    if (auto why = check_item(array[i], a)) {
      out.rejected.push_back({i, *why});
    } else {
      out.accepted.push_back(std::move(a));
    }
  }
  return out;
}

json to_json(const ObjectAnnotation& a) {
  return {{"Event", to_string(a.event)},
          {"Reason", a.reason},
          {"label", a.label},
          {"confidence", a.confidence}};
}

ObjectAnnotation annotation_from_json(const json& j) {
  ObjectAnnotation a;
  if (auto why = check_item(j, a)) throw SchemaError("annotation: " + *why);
  return a;
}

std::string serialize(std::span<const ObjectAnnotation> objects) {
  json arr = json::array();
  for (const auto& o : objects) arr.push_back(to_json(o));
  return arr.dump();
}

std::string align_annotations(std::span<const AnnotationSentence> sentences,
                              const scene_gate::SubclipRecord& subclip, double fps,
                              double min_overlap_fraction) {
  if (!(fps > 0.0)) throw std::invalid_argument("fps must be > 0");
  const double lo = static_cast<double>(subclip.start_frame) / fps;
  const double hi = static_cast<double>(subclip.end_frame + 1) / fps;
  std::string out;
  for (const auto& s : sentences) {
    if (s.video_id != subclip.video_id) continue;
    const double overlap = std::min(hi, s.end_s) - std::max(lo, s.start_s);
    const double duration = s.end_s - s.start_s;
    bool keep;
    if (duration <= 0.0) {
      keep = s.start_s >= lo && s.start_s < hi;
    } else {
      keep = overlap > 0.0 && overlap / duration >= min_overlap_fraction;
    }
    if (!keep) continue;
    char span[64];
    std::snprintf(span, sizeof span, "[%.1fs - %.1fs] ", s.start_s, s.end_s);
    if (!out.empty()) out += '\n';
    out += span;
    out += s.text;
  }
  return out;
}

NarrationResult narrate_subclip(const clients::MediaRef& media, const std::string& subclip_id,
                                std::string_view annotations_text, clients::VlmClient& vlm,
                                const NarrationConfig& cfg) {
  NarrationResult out;
  out.subclip_id = subclip_id;
  const std::string prompt = build_narration_prompt(annotations_text);
  out.prompt_sha256 = sha256_hex(prompt);

  const int attempts = std::max(1, cfg.parse_attempts);
  for (int a = 0; a < attempts; ++a) {
    auto reply = vlm.generate(media, prompt, cfg.decode);
    ++out.attempts;
    out.retry_count += reply.info.retry_count;
    out.response = std::move(reply.text);
    try {
      auto parsed = parse_narration(out.response);
      out.objects = std::move(parsed.accepted);
      out.rejected = std::move(parsed.rejected);
      if (out.objects.empty()) out.flag = "no_objects";
      return out;
    } catch (const ParseError&) {
      // try another generation
    }
  }
  out.flag = "unparseable";
  return out;
}

}  // namespace vanguard::narration
