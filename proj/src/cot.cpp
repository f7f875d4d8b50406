#include "vanguard/cot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

#include "vanguard/prompts.hpp"

namespace vanguard::cot {

namespace {

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

std::string bins_text(const geometry::BinBox& b) {
  return "[" + std::to_string(b.v[0]) + ", " + std::to_string(b.v[1]) + ", " +
         std::to_string(b.v[2]) + ", " + std::to_string(b.v[3]) + "]";
}

// Trims whitespace and markdown emphasis.
std::string clean(std::string_view s) {
  std::size_t b = 0, e = s.size();
  auto junk = [](char c) { return std::isspace(static_cast<unsigned char>(c)) || c == '*'; };
  while (b < e && junk(s[b])) ++b;
  while (e > b && junk(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

constexpr std::string_view kDetectedTag = "DETECTED: ";

}  // namespace

std::vector<grounding::GroundedObject> canonical_order(
    std::span<const grounding::GroundedObject> objects) {
  std::vector<grounding::GroundedObject> out(objects.begin(), objects.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& l, const auto& r) {
    const auto& a = l.annotation;
    const auto& b = r.annotation;
    if (a.event != b.event) return a.event == Label::Abnormal;
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return a.label < b.label;
  });
  return out;
}

std::string format_object_context(const grounding::GroundedSet& grounded) {
  std::string out;
  for (const auto& o : canonical_order(grounded.objects)) {
    if (!out.empty()) out += '\n';
    out += "- " + o.annotation.label;
    if (o.box) out += " at " + bins_text(geometry::to_bins(*o.box));
    out += ": \"" + o.annotation.reason + "\" (" + std::string(to_string(o.annotation.event)) + ")";
  }
  return out;
}

std::string build_cot_prompt(std::string_view object_context, std::string_view annotations_text,
                             Label label) {
  return prompts::fill(prompts::kCotTemplate, {{"object_context", std::string(object_context)},
                                               {"annotations_text", std::string(annotations_text)},
                                               {"label", std::string(to_string(label))}});
}

std::string detection_block(const grounding::GroundedSet& grounded) {
  std::string out;
  for (const auto& o : canonical_order(grounded.objects)) {
    if (!o.box) continue;
    out += std::string(kDetectedTag) + o.annotation.label + " " +
           bins_text(geometry::to_bins(*o.box)) + " (" +
           std::string(to_string(o.annotation.event)) + ")\n";
  }
  return out;
}

std::optional<std::string> validate_reply(std::string_view reply, Label label) {
  const std::string lower = to_lower(reply);
  if (lower.find("observations:") == std::string::npos) return "missing Observations section";
  if (lower.find("analysis:") == std::string::npos) return "missing Analysis section";

  std::string body = clean(reply);
  const auto nl = body.find_last_of('\n');
  std::string last = clean(nl == std::string::npos ? body : body.substr(nl + 1));
  while (!last.empty() && last.back() == '.') last.pop_back();
  last = to_lower(clean(last));
  if (last.rfind("answer:", 0) != 0) return "missing final answer";
  const std::string token = clean(last.substr(7));
  const std::string want = to_lower(to_string(label));
  if (token != want) return "final answer '" + token + "' does not match label " + want;
  return std::nullopt;
}

SynthesisResult synthesize(const clients::MediaRef& media, const grounding::GroundedSet& grounded,
                           std::string_view annotations_text, Label label,
                           clients::VlmClient& vlm, const SynthesisConfig& cfg) {
  SynthesisResult out;
  const std::string prompt =
      build_cot_prompt(format_object_context(grounded), annotations_text, label);
  const int attempts = std::max(1, cfg.attempts);
  for (int a = 0; a < attempts; ++a) {
    auto reply = vlm.generate(media, prompt, cfg.decode);
    ++out.attempts;
    out.retry_count += reply.info.retry_count;
    std::string text = trim(reply.text);
    if (text.rfind(prompts::kCotPrefix, 0) == 0) text = trim(text.substr(prompts::kCotPrefix.size()));
    if (auto why = validate_reply(text, label)) {
      out.rejection = *why;
      continue;
    }
    std::string response = detection_block(grounded);
    if (!response.empty()) response += '\n';
    response += std::string(prompts::kCotPrefix) + "\n\n" + text;
    out.item = InstructionItem{grounded.subclip_id, label, std::string(prompts::kAnomalyQuestion),
                               std::move(response)};
    out.rejection.reset();
    return out;
  }
  return out;
}

ParsedCoT parse_cot(std::string_view text) {
  const std::string lower = to_lower(text);
  constexpr std::string_view kObs = "observations:";
  constexpr std::string_view kAna = "analysis:";
  constexpr std::string_view kAns = "answer:";

  const auto obs = lower.find(kObs);
  std::size_t cursor = obs == std::string::npos ? 0 : obs + kObs.size();
  const auto ana = lower.find(kAna, cursor);
  if (ana != std::string::npos) cursor = ana + kAna.size();
  const auto ans = lower.find(kAns, cursor);
  if (ans == std::string::npos) throw ParseError("missing Answer section", text.size());

  ParsedCoT out;
  out.has_observations = obs != std::string::npos;
  out.has_analysis = ana != std::string::npos;
  if (out.has_observations) {
    const auto end = out.has_analysis ? ana : ans;
    out.observations = clean(text.substr(obs + kObs.size(), end - obs - kObs.size()));
  }
  if (out.has_analysis) {
    out.analysis = clean(text.substr(ana + kAna.size(), ans - ana - kAna.size()));
  }

  std::size_t p = ans + kAns.size();
  while (p < text.size() && (std::isspace(static_cast<unsigned char>(text[p])) || text[p] == '*')) ++p;
  std::size_t q = p;
  while (q < text.size() && is_alpha(text[q])) ++q;
  const std::string token = to_lower(text.substr(p, q - p));
  if (token == "abnormal") {
    out.answer = Label::Abnormal;
  } else if (token == "normal") {
    out.answer = Label::Normal;
  } else {
    throw ParseError("answer token '" + token + "' is not Normal or Abnormal", p);
  }

  static const std::array<std::string_view, 28> kStop = {
      "at",   "in",     "on",      "of",     "the",  "a",     "an",    "is",   "with", "box",
      "bounding", "bbox", "located", "position", "coordinates", "region", "area", "and", "by",
      "its",  "his",    "her",     "their",  "s",    "to",    "near",  "from", "positioned"};
  auto stopword = [&](std::string_view w) {
    return std::find(kStop.begin(), kStop.end(), w) != kStop.end();
  };

  for (std::size_t open = text.find('['); open != std::string_view::npos;
       open = text.find('[', open + 1)) {
    const auto close = text.find(']', open + 1);
    if (close == std::string_view::npos) break;
    const std::string_view inner = text.substr(open + 1, close - open - 1);
    const bool numeric = !inner.empty() && std::all_of(inner.begin(), inner.end(), [](char c) {
      return std::isdigit(static_cast<unsigned char>(c)) || std::isspace(static_cast<unsigned char>(c)) ||
             c == ',' || c == '-' || c == '+' || c == '.';
    });
    if (!numeric) continue;
    const std::string raw(text.substr(open, close - open + 1));

    std::vector<long long> nums;
    bool ok = true;
    std::size_t i = 0;
    while (i < inner.size() && ok) {
      while (i < inner.size() && (std::isspace(static_cast<unsigned char>(inner[i])) || inner[i] == ',')) ++i;
      if (i >= inner.size()) break;
      std::size_t j = i;
      while (j < inner.size() && inner[j] != ',' && !std::isspace(static_cast<unsigned char>(inner[j]))) ++j;
      long long v = 0;
      const auto* first = inner.data() + i;
      const auto* last = inner.data() + j;
      if (*first == '+') ++first;
      auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last) ok = false;
      nums.push_back(v);
      i = j;
    }
    if (!ok || nums.size() != 4) {
      out.skipped.push_back({open, raw, "expected four integers"});
      continue;
    }
    if (std::any_of(nums.begin(), nums.end(), [](long long v) { return v < 0 || v > geometry::kBinScale; })) {
      out.skipped.push_back({open, raw, "bin out of range"});
      continue;
    }
    if (nums[0] > nums[2] || nums[1] > nums[3]) {
      out.skipped.push_back({open, raw, "inverted box"});
      continue;
    }
    LabeledBox lb{std::nullopt, geometry::BinBox::make(static_cast<int>(nums[0]), static_cast<int>(nums[1]),
                                                       static_cast<int>(nums[2]), static_cast<int>(nums[3]))};

    const auto line_start = text.rfind('\n', open);
    const std::size_t ls = line_start == std::string_view::npos ? 0 : line_start + 1;
    const std::string_view line_head = text.substr(ls, open - ls);
    if (line_head.rfind(kDetectedTag, 0) == 0) {
      lb.label = trim(line_head.substr(kDetectedTag.size()));
    } else {
      const std::size_t from = open > 60 ? open - 60 : 0;
      std::string_view window = text.substr(from, open - from);
      std::size_t e = window.size();
      while (e > 0) {
        while (e > 0 && !is_alpha(window[e - 1])) --e;
        std::size_t b = e;
        while (b > 0 && is_alpha(window[b - 1])) --b;
        if (b == e) break;
        const std::string word = to_lower(window.substr(b, e - b));
        // A word cut by the window edge is not trustworthy.
        if (b == 0 && from > 0) break;
        if (!stopword(word)) {
          lb.label = word;
          break;
        }
        e = b;
      }
    }
    out.boxes.push_back(std::move(lb));
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Normal: return "Normal";
    case Verdict::Abnormal: return "Abnormal";
    default: return "Unknown";
  }
}

std::optional<VerdictProfile> parse_profile(std::string_view s) {
  if (s == "keyword_priority") return VerdictProfile::KeywordPriority;
  if (s == "first80") return VerdictProfile::First80;
  if (s == "xml_which") return VerdictProfile::XmlWhich;
  return std::nullopt;
}

namespace {

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (is_alpha(c) || c == '\'') {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool negated(const std::vector<std::string>& w, std::size_t i) {
  static const std::array<std::string_view, 10> kNeg = {
      "no", "not", "without", "never", "nothing", "none", "isn't", "aren't", "wasn't", "weren't"};
  for (std::size_t k = i >= 3 ? i - 3 : 0; k < i; ++k) {
    if (std::find(kNeg.begin(), kNeg.end(), w[k]) != kNeg.end()) return true;
    if (w[k].size() > 3 && w[k].ends_with("n't")) return true;
  }
  return false;
}

Verdict keyword_verdict(std::string_view text) {
  const auto w = words(text);
  // 1. explicit positive keywords
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == "yes") return Verdict::Abnormal;
    if (w[i] == "abnormal" && !negated(w, i)) return Verdict::Abnormal;
  }
  // 2. explicit negative keywords, including negated "abnormal"
  for (const auto& t : w) {
    if (t == "no" || t == "normal" || t == "abnormal") return Verdict::Normal;
  }
  // 3. softer cues
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto& t = w[i];
    const bool cue = t.find("anomal") != std::string::npos ||
                     t.find("unusual") != std::string::npos ||
                     t.find("suspicious") != std::string::npos;
    if (cue && !negated(w, i)) return Verdict::Abnormal;
  }
  return Verdict::Unknown;
}

}  // namespace

Verdict parse_verdict(std::string_view text, VerdictProfile profile) {
  switch (profile) {
    case VerdictProfile::KeywordPriority:
      return keyword_verdict(text);
    case VerdictProfile::First80:
      return keyword_verdict(text.substr(0, std::min<std::size_t>(80, text.size())));
    case VerdictProfile::XmlWhich: {
      const std::string lower = to_lower(text);
      const auto open = lower.find("<which>");
      if (open == std::string::npos) return Verdict::Unknown;
      const auto close = lower.find("</which>", open);
      const std::string inner =
          clean(lower.substr(open + 7, close == std::string::npos ? std::string::npos : close - open - 7));
      if (inner == "abnormal") return Verdict::Abnormal;
      if (inner == "normal") return Verdict::Normal;
      return Verdict::Unknown;
    }
  }
  return Verdict::Unknown;
}

double window_score(std::span<const Verdict> verdicts) {
  if (verdicts.empty()) return 0.0;
  const auto n = std::count(verdicts.begin(), verdicts.end(), Verdict::Abnormal);
  return static_cast<double>(n) / static_cast<double>(verdicts.size());
}

}  // namespace vanguard::cot
