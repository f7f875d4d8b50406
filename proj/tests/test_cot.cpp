#include <gtest/gtest.h>

#include <regex>

#include "support.hpp"
#include "vanguard/clients.hpp"
#include "vanguard/cot.hpp"
#include "vanguard/prompts.hpp"

using namespace vanguard;
using namespace vanguard::cot;
using geometry::BinBox;

namespace {

class CannedVlm : public clients::MockTransport {
 public:
  explicit CannedVlm(std::vector<std::string> replies) : replies_(std::move(replies)) {}

 protected:
  nlohmann::json respond(const std::string&, const nlohmann::json&) override {
    std::lock_guard lock(mu_);
    const auto& r = replies_[std::min(next_++, replies_.size() - 1)];
    return {{"text", r}};
  }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::mutex mu_;
};

clients::ServiceEndpoint fast() {
  clients::ServiceEndpoint e;
  e.base_url = "mock://";
  e.backoff_initial_s = 0.0;
  return e;
}

grounding::GroundedObject gobj(const std::string& label, Label ev, const std::string& reason, double conf,
                               std::optional<BinBox> bins) {
  grounding::GroundedObject o;
  o.annotation = {ev, reason, label, conf};
  if (bins) {
    o.box = geometry::from_bins(*bins);
    o.det_confidence = 0.5;
    o.anchor_frame = 10;
    o.det_label = label;
  }
  return o;
}

const clients::MediaRef kMedia{"mock://ucf/Arrest002.mp4", std::nullopt, 0, 599};

}  // namespace

TEST(ObjectContext, FigureBullet) {
  grounding::GroundedSet g;
  g.objects.push_back(gobj("man", Label::Abnormal, "aggressive posture", 0.9, BinBox::make(247, 318, 448, 853)));
  EXPECT_EQ(format_object_context(g), "- man at [247, 318, 448, 853]: \"aggressive posture\" (Abnormal)");
}

TEST(ObjectContext, EmptyAndUnboxed) {
  EXPECT_EQ(format_object_context({}), "");
  grounding::GroundedSet g;
  g.objects.push_back(gobj("floor", Label::Normal, "visible", 0.8, std::nullopt));
  EXPECT_EQ(format_object_context(g), "- floor: \"visible\" (Normal)");
}

TEST(ObjectContext, CanonicalOrder) {
  grounding::GroundedSet g;
  g.objects.push_back(gobj("ladder", Label::Normal, "still", 0.95, BinBox::make(661, 131, 804, 455)));
  g.objects.push_back(gobj("man", Label::Abnormal, "held", 0.80, BinBox::make(456, 559, 634, 849)));
  g.objects.push_back(gobj("car", Label::Normal, "parked", 0.95, std::nullopt));
  g.objects.push_back(gobj("man", Label::Abnormal, "restraining", 0.93, BinBox::make(100, 100, 300, 800)));
  EXPECT_EQ(format_object_context(g),
            "- man at [100, 100, 300, 800]: \"restraining\" (Abnormal)\n"
            "- man at [456, 559, 634, 849]: \"held\" (Abnormal)\n"
            "- car: \"parked\" (Normal)\n"
            "- ladder at [661, 131, 804, 455]: \"still\" (Normal)");
}

TEST(ObjectContext, InjectiveOnFields) {
  std::mt19937_64 rng(41);
  const char* labels[] = {"man", "car", "door"};
  const char* reasons[] = {"standing", "moving fast", "idle"};
  std::map<std::string, std::string> seen;  // context -> canonical key
  for (int t = 0; t < 2000; ++t) {
    grounding::GroundedSet g;
    std::vector<std::string> keys;
    const std::size_t n = uniform_index(rng, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ev = uniform_index(rng, 2) ? Label::Abnormal : Label::Normal;
      std::optional<BinBox> bins;
      if (uniform_index(rng, 3)) {
        const int a = static_cast<int>(uniform_index(rng, 3)) * 100;
        bins = BinBox::make(a, a, a + 50, a + 50);
      }
      const std::string label = labels[uniform_index(rng, 3)], reason = reasons[uniform_index(rng, 3)];
      g.objects.push_back(gobj(label, ev, reason, 0.5, bins));
      keys.push_back(label + "|" + reason + "|" + std::string(to_string(ev)) + "|" +
                     (bins ? std::to_string(bins->v[0]) : "-"));
    }
    std::sort(keys.begin(), keys.end());
    std::string key;
    for (const auto& k : keys) key += k + ";";
    const auto ctx = format_object_context(g);
    auto [it, fresh] = seen.emplace(ctx, key);
    if (!fresh) ASSERT_EQ(it->second, key) << ctx;
  }
}

TEST(CotPrompt, MatchesGoldenFile) {
  grounding::GroundedSet g;
  g.objects.push_back(gobj("man", Label::Abnormal, "aggressive posture", 0.9, BinBox::make(247, 318, 448, 853)));
  const auto golden = vt::slurp(vt::fixture_dir() / "cot_prompt.golden.txt");
  EXPECT_EQ(build_cot_prompt(format_object_context(g), "[0.0s - 20.0s] A man is physically restraining another man.",
                             Label::Abnormal),
            golden);
}

TEST(CotPrompt, NormalLabelAndEmptyContext) {
  const auto p = build_cot_prompt("", "", Label::Normal);
  EXPECT_NE(p.find("The video is labeled: Normal\n"), std::string::npos);
  EXPECT_NE(p.find("End with exactly: Answer: Normal\n"), std::string::npos);
  EXPECT_NE(p.find("were detected:\n\n\n"), std::string::npos);
  EXPECT_EQ(p.find("Abnormal"), std::string::npos);
}

TEST(ParseCot, AppendixResponse) {
  const auto text = vt::slurp(vt::fixture_dir() / "appendix_cot.txt");
  const auto p = parse_cot(text);
  EXPECT_EQ(p.answer, Label::Abnormal);
  ASSERT_EQ(p.boxes.size(), 2u);
  EXPECT_EQ(p.boxes[0].box, BinBox::make(456, 559, 634, 849));
  EXPECT_EQ(p.boxes[1].box, BinBox::make(661, 131, 804, 455));
  EXPECT_EQ(p.boxes[0].label, "man");
  EXPECT_EQ(p.boxes[1].label, "ladder");
  EXPECT_TRUE(p.has_observations);
  EXPECT_TRUE(p.has_analysis);
  EXPECT_EQ(p.observations.rfind("I observe a man in a white shirt", 0), 0u);
  EXPECT_EQ(p.analysis.substr(p.analysis.size() - 8), "context.");
}

TEST(ParseCot, AnswerOnly) {
  const auto p = parse_cot("Answer: Normal");
  EXPECT_EQ(p.answer, Label::Normal);
  EXPECT_TRUE(p.observations.empty());
  EXPECT_TRUE(p.analysis.empty());
  EXPECT_TRUE(p.boxes.empty());
}

TEST(ParseCot, MalformedTuplesSkipped) {
  const auto p = parse_cot("Observations: car at [12, 5000, 3, 4] and man at [1, 2, 3] and dog at [10, 20, 30, 40] "
                           "and cat at [50, 50, 10, 60]. Analysis: x. Answer: abnormal.");
  ASSERT_EQ(p.boxes.size(), 1u);
  EXPECT_EQ(p.boxes[0].label, "dog");
  ASSERT_EQ(p.skipped.size(), 3u);
  EXPECT_EQ(p.skipped[0].reason, "bin out of range");
  EXPECT_EQ(p.skipped[1].reason, "expected four integers");
  EXPECT_EQ(p.skipped[2].reason, "inverted box");
  EXPECT_EQ(p.answer, Label::Abnormal);
}

TEST(ParseCot, MissingOrBadAnswer) {
  EXPECT_THROW(parse_cot("Observations: a man. Analysis: fine."), ParseError);
  EXPECT_THROW(parse_cot("Answer: maybe"), ParseError);
}

TEST(ParseCot, HeadersCaseInsensitiveAndOrdered) {
  const auto p = parse_cot("OBSERVATIONS: a [1, 2, 3, 4]\nANALYSIS: b\nANSWER: NORMAL");
  EXPECT_EQ(p.observations, "a [1, 2, 3, 4]");
  EXPECT_EQ(p.analysis, "b");
  EXPECT_EQ(p.answer, Label::Normal);
  EXPECT_EQ(p.boxes.size(), 1u);
}

TEST(ParseCot, DetectedLinesCarryLabels) {
  const auto p = parse_cot("DETECTED: traffic cone [1, 2, 3, 4] (Normal)\n\nLet me analyze this video.\n\n"
                           "Observations: x.\n\nAnalysis: y.\n\nAnswer: Normal");
  ASSERT_EQ(p.boxes.size(), 1u);
  EXPECT_EQ(p.boxes[0].label, "traffic cone");
}

TEST(ValidateReply, Rules) {
  EXPECT_FALSE(validate_reply("Observations: a\nAnalysis: b\nAnswer: Abnormal", Label::Abnormal));
  EXPECT_FALSE(validate_reply("**Observations:** a\n**Analysis:** b\n**Answer: Abnormal**", Label::Abnormal));
  EXPECT_TRUE(validate_reply("Observations: a\nAnalysis: b", Label::Abnormal));
  EXPECT_TRUE(validate_reply("Observations: a\nAnalysis: b\nAnswer: Normal", Label::Abnormal));
  EXPECT_TRUE(validate_reply("Analysis: b\nAnswer: Normal", Label::Normal));
}

TEST(Synthesize, AppendixReplyAccepted) {
  const auto reply = vt::slurp(vt::fixture_dir() / "appendix_cot.txt");
  clients::VlmClient vlm(fast(), std::make_shared<CannedVlm>(std::vector<std::string>{reply}));
  grounding::GroundedSet g;
  g.subclip_id = "Arrest002:0-599";
  g.objects.push_back(gobj("man", Label::Abnormal, "being held down", 0.91, BinBox::make(456, 559, 634, 849)));
  g.objects.push_back(gobj("ladder", Label::Normal, "stationary", 0.88, BinBox::make(661, 131, 804, 455)));
  g.objects.push_back(gobj("floor", Label::Normal, "undisturbed", 0.8, std::nullopt));
  const auto r = synthesize(kMedia, g, "", Label::Abnormal, vlm);
  ASSERT_TRUE(r.item) << r.rejection.value_or("");
  const auto& resp = r.item->assistant_response;
  EXPECT_EQ(resp.rfind("DETECTED: man [456, 559, 634, 849] (Abnormal)\nDETECTED: ladder [661, 131, 804, 455] (Normal)\n\n"
                       "Let me analyze this video.\n\n**Observations:**",
                       0),
            0u);
  // the prefix appears once even though the reply already carried it
  EXPECT_EQ(resp.find("Let me analyze"), resp.rfind("Let me analyze"));
  EXPECT_EQ(r.item->user_prompt, prompts::kAnomalyQuestion);
  const auto p = parse_cot(resp);
  EXPECT_EQ(p.answer, Label::Abnormal);
  EXPECT_EQ(p.boxes.size(), 4u);
}

TEST(Synthesize, MissingAnswerRejected) {
  clients::VlmClient vlm(fast(), std::make_shared<CannedVlm>(std::vector<std::string>{"Observations: a\nAnalysis: b"}));
  const auto r = synthesize(kMedia, {}, "", Label::Normal, vlm);
  EXPECT_FALSE(r.item);
  EXPECT_EQ(r.rejection, "missing final answer");
  EXPECT_EQ(r.attempts, 2);
}

TEST(Synthesize, SecondAttemptCanSucceed) {
  clients::VlmClient vlm(fast(), std::make_shared<CannedVlm>(std::vector<std::string>{
                                     "Observations: a\nAnalysis: b\nAnswer: Abnormal",
                                     "Observations: a\nAnalysis: b\nAnswer: Normal"}));
  const auto r = synthesize(kMedia, {}, "", Label::Normal, vlm);
  ASSERT_TRUE(r.item);
  EXPECT_EQ(r.attempts, 2);
  // empty grounded set: no detection block
  EXPECT_EQ(r.item->assistant_response.rfind("Let me analyze this video.\n\n", 0), 0u);
}

TEST(Synthesize, RoundTripRecoversDetectionBlock) {
  std::mt19937_64 rng(43);
  const char* labels[] = {"man", "woman", "car", "traffic light", "dog"};
  for (int t = 0; t < 200; ++t) {
    grounding::GroundedSet g;
    g.subclip_id = "v:0-10";
    const std::size_t n = uniform_index(rng, 5);
    for (std::size_t i = 0; i < n; ++i) {
      auto b = geometry::to_bins(vt::random_box(rng));
      g.objects.push_back(gobj(labels[uniform_index(rng, 5)], uniform_index(rng, 2) ? Label::Abnormal : Label::Normal,
                               "doing things", vt::unit(rng), uniform_index(rng, 4) ? std::optional(b) : std::nullopt));
    }
    const Label label = uniform_index(rng, 2) ? Label::Abnormal : Label::Normal;
    const std::string reply = "Observations: a person at [10, 10, 20, 20] moves.\nAnalysis: fine.\nAnswer: " +
                              std::string(to_string(label));
    clients::VlmClient vlm(fast(), std::make_shared<CannedVlm>(std::vector<std::string>{reply}));
    const auto r = synthesize(kMedia, g, "", label, vlm);
    ASSERT_TRUE(r.item);
    const auto p = parse_cot(r.item->assistant_response);
    ASSERT_EQ(p.answer, label);
    std::vector<LabeledBox> want;
    for (const auto& o : canonical_order(g.objects)) {
      if (o.box) want.push_back({o.annotation.label, geometry::to_bins(*o.box)});
    }
    want.push_back({"person", BinBox::make(10, 10, 20, 20)});
    ASSERT_EQ(p.boxes, want);
  }
}

TEST(ParseVerdict, Examples) {
  EXPECT_EQ(parse_verdict("Yes, there is a fight", VerdictProfile::KeywordPriority), Verdict::Abnormal);
  EXPECT_EQ(parse_verdict("No abnormal events.", VerdictProfile::KeywordPriority), Verdict::Normal);
  EXPECT_EQ(parse_verdict("<which>Abnormal</which>", VerdictProfile::XmlWhich), Verdict::Abnormal);
  EXPECT_EQ(parse_verdict("<which> normal </which>", VerdictProfile::XmlWhich), Verdict::Normal);
  EXPECT_EQ(parse_verdict("Abnormal", VerdictProfile::XmlWhich), Verdict::Unknown);
  EXPECT_EQ(parse_verdict("The scene looks normal.", VerdictProfile::KeywordPriority), Verdict::Normal);
  EXPECT_EQ(parse_verdict("Something suspicious happens.", VerdictProfile::KeywordPriority), Verdict::Abnormal);
  EXPECT_EQ(parse_verdict("There isn't anything unusual.", VerdictProfile::KeywordPriority), Verdict::Unknown);
  EXPECT_EQ(parse_verdict("", VerdictProfile::KeywordPriority), Verdict::Unknown);
}

TEST(ParseVerdict, First80OnlyReadsPrefix) {
  const std::string text = std::string(90, '.') + " abnormal";
  EXPECT_EQ(parse_verdict(text, VerdictProfile::KeywordPriority), Verdict::Abnormal);
  EXPECT_EQ(parse_verdict(text, VerdictProfile::First80), Verdict::Unknown);
}

TEST(ParseVerdict, TotalOnArbitraryBytes) {
  std::mt19937_64 rng(47);
  for (int t = 0; t < 2000; ++t) {
    std::string s(uniform_index(rng, 200), '\0');
    for (auto& c : s) c = static_cast<char>(uniform_index(rng, 256));
    for (auto prof : {VerdictProfile::KeywordPriority, VerdictProfile::First80, VerdictProfile::XmlWhich}) {
      EXPECT_NO_THROW(parse_verdict(s, prof));
    }
  }
}

TEST(ParseVerdict, Profiles) {
  EXPECT_EQ(parse_profile("first80"), VerdictProfile::First80);
  EXPECT_FALSE(parse_profile("other"));
}

TEST(WindowScore, Counting) {
  using V = Verdict;
  const std::vector<V> a = {V::Abnormal, V::Abnormal, V::Normal, V::Normal, V::Normal};
  EXPECT_DOUBLE_EQ(window_score(a), 0.4);
  EXPECT_EQ(window_score(std::vector<V>(4, V::Normal)), 0.0);
  EXPECT_EQ(window_score(std::vector<V>(4, V::Abnormal)), 1.0);
}
