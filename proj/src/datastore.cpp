#include "vanguard/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "vanguard/prompts.hpp"

namespace vanguard::datastore {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSONL

std::vector<std::pair<std::size_t, json>> read_jsonl_numbered(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::pair<std::size_t, json>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      out.emplace_back(n, json::parse(line));
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string("invalid JSON: ") + e.what(), n);
    }
  }
  return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  for (auto& [line, value] : read_jsonl_numbered(path)) out.push_back(std::move(value));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_jsonl(const fs::path& path, std::span<const json> records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

// ---------------------------------------------------------------------------
// Record schemas

namespace {

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const SchemaError&) {
    throw;
  } catch (const json::exception& e) {
    throw SchemaError(std::string(what) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string(what) + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw SchemaError(std::string(what) + ": " + e.what());
  }
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw SchemaError(std::string(what) + " must be an object");
}

Label label_at(const json& j, const char* key) {
  auto l = parse_label(j.at(key).get<std::string>());
  if (!l) throw SchemaError(std::string(key) + " must be Normal or Abnormal");
  return *l;
}

json box_json(const geometry::Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

geometry::Box box_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw SchemaError("box needs 4 numbers");
  return geometry::Box::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

json bins_json(const geometry::BinBox& b) { return json::array({b.v[0], b.v[1], b.v[2], b.v[3]}); }

}  // namespace

json to_json(const VideoRecord& v) {
  json iv = json::array();
  for (const auto& a : v.anomalous) iv.push_back({a.start, a.end});
  return {{"video_id", v.video_id}, {"uri", v.uri},           {"total_frames", v.total_frames},
          {"fps", v.fps},           {"label", to_string(v.label)}, {"category", v.category},
          {"anomalous", iv}};
}

VideoRecord video_from_json(const json& j) {
  require_object(j, "video");
  return guarded("video", [&] {
    VideoRecord v;
    v.video_id = j.at("video_id").get<std::string>();
    v.uri = j.at("uri").get<std::string>();
    v.total_frames = j.at("total_frames").get<std::int64_t>();
    v.fps = j.value("fps", 30.0);
    v.label = label_at(j, "label");
    v.category = j.value("category", std::string(to_string(v.label)));
    for (const auto& a : j.value("anomalous", json::array())) {
      v.anomalous.push_back({a.at(0).get<std::int64_t>(), a.at(1).get<std::int64_t>()});
      if (v.anomalous.back().end < v.anomalous.back().start) throw SchemaError("inverted anomalous interval");
    }
    if (v.video_id.empty()) throw SchemaError("empty video_id");
    if (v.total_frames < 1) throw SchemaError("total_frames must be >= 1");
    if (!(v.fps > 0.0)) throw SchemaError("fps must be > 0");
    return v;
  });
}

json to_json(const narration::AnnotationSentence& s) {
  return {{"video_id", s.video_id}, {"start_s", s.start_s}, {"end_s", s.end_s}, {"text", s.text}};
}

narration::AnnotationSentence sentence_from_json(const json& j) {
  require_object(j, "sentence");
  return guarded("sentence", [&] {
    narration::AnnotationSentence s{j.at("video_id").get<std::string>(), j.at("start_s").get<double>(),
                                    j.at("end_s").get<double>(), j.at("text").get<std::string>()};
    if (s.end_s < s.start_s) throw SchemaError("sentence ends before it starts");
    return s;
  });
}

json to_json(const scene_gate::SubclipRecord& s) {
  json j = {{"id", s.id()},
            {"video_id", s.video_id},
            {"start_frame", s.start_frame},
            {"end_frame", s.end_frame},
            {"label", to_string(s.label)}};
  j["boundary_similarity"] = s.boundary_similarity ? json(*s.boundary_similarity) : json(nullptr);
  return j;
}

scene_gate::SubclipRecord subclip_from_json(const json& j) {
  require_object(j, "subclip");
  return guarded("subclip", [&] {
    scene_gate::SubclipRecord s;
    s.video_id = j.at("video_id").get<std::string>();
    s.start_frame = j.at("start_frame").get<std::int64_t>();
    s.end_frame = j.at("end_frame").get<std::int64_t>();
    s.label = label_at(j, "label");
    if (j.contains("boundary_similarity") && !j["boundary_similarity"].is_null()) {
      s.boundary_similarity = j["boundary_similarity"].get<double>();
    }
    if (s.start_frame < 0 || s.end_frame < s.start_frame) throw SchemaError("invalid frame range");
    if (j.contains("id") && j["id"].get<std::string>() != s.id()) throw SchemaError("id does not match frames");
    return s;
  });
}

json to_json(const narration::NarrationResult& r) {
  json objects = json::array();
  for (const auto& o : r.objects) objects.push_back(narration::to_json(o));
  json rejected = json::array();
  for (const auto& x : r.rejected) rejected.push_back({{"index", x.index}, {"reason", x.reason}});
  return {{"subclip_id", r.subclip_id},
          {"objects", objects},
          {"rejected", rejected},
          {"flag", r.flag ? json(*r.flag) : json(nullptr)},
          {"prompt_sha256", r.prompt_sha256},
          {"response", r.response},
          {"retry_count", r.retry_count},
          {"attempts", r.attempts}};
}

narration::NarrationResult narration_from_json(const json& j) {
  require_object(j, "annotation record");
  return guarded("annotation record", [&] {
    narration::NarrationResult r;
    r.subclip_id = j.at("subclip_id").get<std::string>();
    for (const auto& o : j.at("objects")) r.objects.push_back(narration::annotation_from_json(o));
    for (const auto& x : j.value("rejected", json::array())) {
      r.rejected.push_back({x.at("index").get<std::size_t>(), x.at("reason").get<std::string>()});
    }
    if (j.contains("flag") && !j["flag"].is_null()) r.flag = j["flag"].get<std::string>();
    r.prompt_sha256 = j.value("prompt_sha256", std::string());
    r.response = j.value("response", std::string());
    r.retry_count = j.value("retry_count", 0);
    r.attempts = j.value("attempts", 0);
    return r;
  });
}

json to_json(const grounding::GroundedSet& g) {
  json objects = json::array();
  for (const auto& o : g.objects) {
    json jo = {{"annotation", narration::to_json(o.annotation)}};
    if (o.box) {
      jo["box"] = box_json(*o.box);
      jo["bins"] = bins_json(geometry::to_bins(*o.box));
      jo["det_confidence"] = *o.det_confidence;
      jo["det_label"] = *o.det_label;
    } else {
      jo["box"] = nullptr;
    }
    objects.push_back(jo);
  }
  return {{"subclip_id", g.subclip_id}, {"anchor_frame", g.anchor_frame}, {"objects", objects},
          {"warnings", g.warnings}};
}

grounding::GroundedSet grounded_from_json(const json& j) {
  require_object(j, "grounded set");
  return guarded("grounded set", [&] {
    grounding::GroundedSet g;
    g.subclip_id = j.at("subclip_id").get<std::string>();
    g.anchor_frame = j.at("anchor_frame").get<std::int64_t>();
    for (const auto& jo : j.at("objects")) {
      grounding::GroundedObject o;
      o.annotation = narration::annotation_from_json(jo.at("annotation"));
      if (jo.contains("box") && !jo["box"].is_null()) {
        o.box = box_from(jo["box"]);
        o.det_confidence = jo.at("det_confidence").get<double>();
        o.det_label = jo.at("det_label").get<std::string>();
        o.anchor_frame = g.anchor_frame;
      }
      g.objects.push_back(std::move(o));
    }
    g.warnings = j.value("warnings", std::vector<std::string>{});
    return g;
  });
}

json to_json(const cot::InstructionItem& item) {
  return {{"subclip_id", item.subclip_id},
          {"label", to_string(item.label)},
          {"system", prompts::kCotSystem},
          {"user_prompt", item.user_prompt},
          {"assistant_response", item.assistant_response}};
}

cot::InstructionItem instruction_from_json(const json& j) {
  require_object(j, "instruction item");
  return guarded("instruction item", [&] {
    cot::InstructionItem item{j.at("subclip_id").get<std::string>(), label_at(j, "label"),
                              j.at("user_prompt").get<std::string>(),
                              j.at("assistant_response").get<std::string>()};
    if (auto why = cot::validate_reply(item.assistant_response, item.label)) throw SchemaError(*why);
    return item;
  });
}

json to_json(const SynthesisFailure& f) {
  return {{"subclip_id", f.subclip_id}, {"reason", f.reason}, {"attempts", f.attempts}};
}

SynthesisFailure failure_from_json(const json& j) {
  require_object(j, "synthesis failure");
  return guarded("synthesis failure", [&] {
    return SynthesisFailure{j.at("subclip_id").get<std::string>(), j.at("reason").get<std::string>(),
                            j.value("attempts", 0)};
  });
}

json to_json(const DetectionItem& d) {
  return {{"sample_id", d.sample_id}, {"subclip_id", d.subclip_id}, {"image", d.image.to_json()},
          {"label", to_string(d.label)}, {"system", d.system},        {"user", d.user},
          {"target", d.target}};
}

DetectionItem detection_item_from_json(const json& j) {
  require_object(j, "detection item");
  return guarded("detection item", [&] {
    DetectionItem d;
    d.sample_id = j.at("sample_id").get<std::string>();
    d.subclip_id = j.at("subclip_id").get<std::string>();
    d.image = clients::MediaRef::from_json(j.at("image"));
    d.label = label_at(j, "label");
    d.system = j.at("system").get<std::string>();
    d.user = j.at("user").get<std::string>();
    d.target = j.at("target").get<std::string>();
    const auto target = json::parse(d.target);
    if (!target.is_array()) throw SchemaError("target must be a JSON array");
    return d;
  });
}

std::optional<DetectionItem> make_detection_item(const grounding::GroundedSet& set,
                                                 const std::string& video_uri, Label label) {
  if (set.grounded_count() == 0) return std::nullopt;
  DetectionItem d;
  d.sample_id = set.subclip_id + "@" + std::to_string(set.anchor_frame);
  d.subclip_id = set.subclip_id;
  d.image = {video_uri, set.anchor_frame, std::nullopt, std::nullopt};
  d.label = label;
  d.system = std::string(prompts::kDetectionSystem);

  std::vector<std::string> labels;
  json target = json::array();
  for (const auto& o : cot::canonical_order(set.objects)) {
    if (!o.box) continue;
    if (std::find(labels.begin(), labels.end(), o.annotation.label) == labels.end()) {
      labels.push_back(o.annotation.label);
    }
    target.push_back({{"bbox_2d", bins_json(geometry::to_bins(*o.box))},
                      {"label", o.annotation.label},
                      {"anomaly", o.annotation.event == Label::Abnormal},
                      {"reason", o.annotation.reason}});
  }
  std::string joined;
  for (const auto& l : labels) joined += (joined.empty() ? "" : ", ") + l;
  d.user = prompts::fill(prompts::kDetectionUserTemplate, {{"labels", joined}});
  d.target = target.dump();
  return d;
}

json to_json(const ManifestEntry& e) {
  return {{"stage", e.stage}, {"stage_name", e.stage_name}, {"sample_id", e.sample_id},
          {"modality", e.modality}, {"label", to_string(e.label)}};
}

ManifestEntry manifest_from_json(const json& j) {
  require_object(j, "manifest entry");
  return guarded("manifest entry", [&] {
    ManifestEntry e{j.at("stage").get<int>(), j.value("stage_name", std::string()),
                    j.at("sample_id").get<std::string>(), j.at("modality").get<std::string>(),
                    label_at(j, "label")};
    static const std::set<std::string> kModalities = {"video_label", "image_detection", "video_cot"};
    if (!kModalities.count(e.modality)) throw SchemaError("unknown modality " + e.modality);
    if (e.stage < 1 || e.stage > 3) throw SchemaError("stage must be 1, 2 or 3");
    return e;
  });
}

std::optional<Schema> parse_schema(std::string_view name) {
  static const std::map<std::string, Schema, std::less<>> k = {
      {"videos", Schema::Videos},         {"sentences", Schema::Sentences},
      {"subclips", Schema::Subclips},     {"annotations", Schema::Annotations},
      {"grounded", Schema::Grounded},     {"instructions", Schema::Instructions},
      {"detections", Schema::Detections}, {"manifest", Schema::Manifest},
      {"eval", Schema::Eval}};
  auto it = k.find(name);
  if (it == k.end()) return std::nullopt;
  return it->second;
}

std::size_t validate_file(const fs::path& path, Schema schema) {
  switch (schema) {
    case Schema::Videos: return read_records(path, &video_from_json).size();
    case Schema::Sentences: return read_records(path, &sentence_from_json).size();
    case Schema::Subclips: return read_records(path, &subclip_from_json).size();
    case Schema::Annotations: return read_records(path, &narration_from_json).size();
    case Schema::Grounded: return read_records(path, &grounded_from_json).size();
    case Schema::Instructions: return read_records(path, &instruction_from_json).size();
    case Schema::Detections: return read_records(path, &detection_item_from_json).size();
    case Schema::Manifest: return read_records(path, &manifest_from_json).size();
    case Schema::Eval: return read_records(path, &metrics::eval_record_from_json).size();
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Run configuration

void RunConfig::validate() const {
  gate.validate();
  grounding.validate();
  if (subsample.max_per_video < 1) throw std::invalid_argument("subsample.max_per_video must be >= 1");
  if (narration.parse_attempts < 1) throw std::invalid_argument("narration.parse_attempts must be >= 1");
  if (synthesis.attempts < 1) throw std::invalid_argument("synthesis.attempts must be >= 1");
  if (!(min_overlap_fraction >= 0.0 && min_overlap_fraction <= 1.0)) {
    throw std::invalid_argument("alignment.min_overlap_fraction must lie in [0, 1]");
  }
  if (stages.empty()) throw std::invalid_argument("training.stages must not be empty");
  for (const auto& s : stages) s.validate();
  if (steps_per_epoch < 1) throw std::invalid_argument("training.steps_per_epoch must be >= 1");
  for (const auto* e : {&vlm, &detector, &embed}) {
    clients::ServiceEndpoint ep;
    ep.base_url = e->url;
    ep.timeout_s = e->timeout_s;
    ep.max_retries = e->max_retries;
    ep.max_in_flight = e->max_in_flight;
    ep.validate();
    if (e->url.empty()) throw std::invalid_argument("endpoint url must not be empty");
  }
}

namespace {

json endpoint_json(const EndpointConfig& e) {
  return {{"url", e.url}, {"timeout_s", e.timeout_s}, {"max_retries", e.max_retries},
          {"max_in_flight", e.max_in_flight}};
}

json stage_json(const loss::StageConfig& s) {
  return {{"stage", s.stage},
          {"name", s.name},
          {"lambda_bce", s.lambda_bce},
          {"lambda_lm", s.lambda_lm},
          {"lambda_giou", s.lambda_giou},
          {"epochs", s.epochs},
          {"peak_lr", s.peak_lr},
          {"warmup_ratio", s.warmup_ratio},
          {"detection_pct", s.detection_pct},
          {"cot_pct", s.cot_pct}};
}

// Reads known keys from `j` into fields via `read`, rejecting anything else.
void strict(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw SchemaError("unknown config key " + where + "." + k);
  }
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

EndpointConfig endpoint_from(const json& j, const std::string& where, EndpointConfig e) {
  strict(j, where, {"url", "timeout_s", "max_retries", "max_in_flight"});
  take(j, "url", e.url);
  take(j, "timeout_s", e.timeout_s);
  take(j, "max_retries", e.max_retries);
  take(j, "max_in_flight", e.max_in_flight);
  return e;
}

loss::StageConfig stage_from(const json& j) {
  strict(j, "training.stages[]", {"stage", "name", "lambda_bce", "lambda_lm", "lambda_giou", "epochs",
                                  "peak_lr", "warmup_ratio", "detection_pct", "cot_pct"});
  loss::StageConfig s;
  const int id = j.at("stage").get<int>();
  // Unlisted fields default to the curriculum preset of the same stage.
  if (id >= 1 && id <= 3) s = loss::curriculum_stages()[static_cast<std::size_t>(id - 1)];
  s.stage = id;
  take(j, "name", s.name);
  take(j, "lambda_bce", s.lambda_bce);
  take(j, "lambda_lm", s.lambda_lm);
  take(j, "lambda_giou", s.lambda_giou);
  take(j, "epochs", s.epochs);
  take(j, "peak_lr", s.peak_lr);
  take(j, "warmup_ratio", s.warmup_ratio);
  take(j, "detection_pct", s.detection_pct);
  take(j, "cot_pct", s.cot_pct);
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(stage_json(s));
  return {
      {"seed", c.seed},
      {"gate", {{"stride", c.gate.stride}, {"tau", c.gate.tau}}},
      {"grounding",
       {{"box_threshold", c.grounding.box_threshold},
        {"dedup_iou", c.grounding.dedup_iou},
        {"max_area_fraction", c.grounding.max_area_fraction},
        {"fallback_frames", c.grounding.fallback_frames}}},
      {"subsample", {{"max_per_video", c.subsample.max_per_video}}},
      {"narration",
       {{"parse_attempts", c.narration.parse_attempts},
        {"temperature", c.narration.decode.temperature},
        {"max_tokens", c.narration.decode.max_tokens}}},
      {"synthesis",
       {{"attempts", c.synthesis.attempts},
        {"temperature", c.synthesis.decode.temperature},
        {"max_tokens", c.synthesis.decode.max_tokens}}},
      {"alignment", {{"min_overlap_fraction", c.min_overlap_fraction}}},
      {"training",
       {{"steps_per_epoch", c.steps_per_epoch},
        {"stage2_slots", c.stage2_slots ? json(*c.stage2_slots) : json(nullptr)},
        {"stages", stages}}},
      {"endpoints",
       {{"vlm", endpoint_json(c.vlm)},
        {"detector", endpoint_json(c.detector)},
        {"embed", endpoint_json(c.embed)},
        {"embed_dim", c.embed_dim}}},
      {"archive", c.archive},
  };
}

RunConfig config_from_json(const json& j) {
  return guarded("config", [&] {
    RunConfig c;
    strict(j, "config", {"seed", "gate", "grounding", "subsample", "narration", "synthesis", "alignment",
                         "training", "endpoints", "archive"});
    take(j, "seed", c.seed);
    take(j, "archive", c.archive);
    if (j.contains("gate")) {
      const auto& g = j["gate"];
      strict(g, "gate", {"stride", "tau"});
      take(g, "stride", c.gate.stride);
      take(g, "tau", c.gate.tau);
    }
    if (j.contains("grounding")) {
      const auto& g = j["grounding"];
      strict(g, "grounding", {"box_threshold", "dedup_iou", "max_area_fraction", "fallback_frames"});
      take(g, "box_threshold", c.grounding.box_threshold);
      take(g, "dedup_iou", c.grounding.dedup_iou);
      take(g, "max_area_fraction", c.grounding.max_area_fraction);
      take(g, "fallback_frames", c.grounding.fallback_frames);
    }
    if (j.contains("subsample")) {
      strict(j["subsample"], "subsample", {"max_per_video"});
      take(j["subsample"], "max_per_video", c.subsample.max_per_video);
    }
    if (j.contains("narration")) {
      const auto& n = j["narration"];
      strict(n, "narration", {"parse_attempts", "temperature", "max_tokens"});
      take(n, "parse_attempts", c.narration.parse_attempts);
      take(n, "temperature", c.narration.decode.temperature);
      take(n, "max_tokens", c.narration.decode.max_tokens);
    }
    if (j.contains("synthesis")) {
      const auto& s = j["synthesis"];
      strict(s, "synthesis", {"attempts", "temperature", "max_tokens"});
      take(s, "attempts", c.synthesis.attempts);
      take(s, "temperature", c.synthesis.decode.temperature);
      take(s, "max_tokens", c.synthesis.decode.max_tokens);
    }
    if (j.contains("alignment")) {
      strict(j["alignment"], "alignment", {"min_overlap_fraction"});
      take(j["alignment"], "min_overlap_fraction", c.min_overlap_fraction);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      strict(t, "training", {"steps_per_epoch", "stage2_slots", "stages"});
      take(t, "steps_per_epoch", c.steps_per_epoch);
      if (t.contains("stage2_slots") && !t["stage2_slots"].is_null()) {
        c.stage2_slots = t["stage2_slots"].get<std::size_t>();
      }
      if (t.contains("stages")) {
        c.stages.clear();
        for (const auto& s : t["stages"]) c.stages.push_back(stage_from(s));
      }
    }
    if (j.contains("endpoints")) {
      const auto& e = j["endpoints"];
      strict(e, "endpoints", {"vlm", "detector", "embed", "embed_dim"});
      if (e.contains("vlm")) c.vlm = endpoint_from(e["vlm"], "endpoints.vlm", c.vlm);
      if (e.contains("detector")) c.detector = endpoint_from(e["detector"], "endpoints.detector", c.detector);
      if (e.contains("embed")) c.embed = endpoint_from(e["embed"], "endpoints.embed", c.embed);
      take(e, "embed_dim", c.embed_dim);
    }
    c.subsample.seed = c.seed;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw SchemaError(std::string("config: ") + e.what());
    }
    return c;
  });
}

RunConfig load_config(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Statistics

double nearest_rank(std::span<const double> sorted, double percentile) {
  if (sorted.empty()) return 0.0;
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  const std::size_t n = values.size();
  s.median = n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
  s.p25 = nearest_rank(values, 25.0);
  s.p75 = nearest_rank(values, 75.0);
  return s;
}

namespace {

json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"p25", s.p25}, {"p75", s.p75}, {"count", s.count}};
}

double frac(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// The generated reasoning without the detection block in front of it.
std::string_view cot_text(const std::string& response) {
  const auto pos = response.find(prompts::kCotPrefix);
  return pos == std::string::npos ? std::string_view(response) : std::string_view(response).substr(pos);
}

}  // namespace

DatasetStats compute_stats(const StatsInput& in) {
  DatasetStats out;
  std::map<std::string, const VideoRecord*> videos;
  for (const auto& v : in.videos) videos[v.video_id] = &v;
  std::map<std::string, const scene_gate::SubclipRecord*> subclips;
  for (const auto& s : in.subclips) subclips[s.id()] = &s;

  // Phase 1
  {
    std::map<std::string, Label> video_label;
    for (const auto& v : in.videos) video_label[v.video_id] = v.label;
    std::map<std::string, std::size_t> per_video;
    std::vector<double> durations;
    std::size_t normal = 0, abnormal = 0;
    for (const auto& s : in.subclips) {
      ++per_video[s.video_id];
      if (!videos.count(s.video_id)) {
        auto& l = video_label[s.video_id];
        if (s.label == Label::Abnormal) l = Label::Abnormal;
      }
      ++(s.label == Label::Abnormal ? abnormal : normal);
      const auto it = videos.find(s.video_id);
      const double fps = it == videos.end() ? in.fps : it->second->fps;
      durations.push_back(static_cast<double>(s.length()) / fps);
    }
    std::size_t vn = 0, va = 0;
    for (const auto& [id, l] : video_label) ++(l == Label::Abnormal ? va : vn);
    std::vector<double> counts;
    for (const auto& [id, l] : video_label) counts.push_back(static_cast<double>(per_video[id]));
    const auto d = summarize(durations);
    auto within = [&](double limit) {
      return frac(static_cast<std::size_t>(std::count_if(durations.begin(), durations.end(),
                                                         [&](double x) { return x <= limit; })),
                  durations.size());
    };
    out.phase1 = {{"videos", video_label.size()},
                  {"videos_normal", vn},
                  {"videos_abnormal", va},
                  {"subclips", in.subclips.size()},
                  {"subclips_normal", normal},
                  {"subclips_abnormal", abnormal},
                  {"subclips_per_video", summary_json(summarize(counts))},
                  {"duration_s", summary_json(d)},
                  {"duration_le_10s", within(10.0)},
                  {"duration_le_30s", within(30.0)},
                  {"duration_le_60s", within(60.0)}};
  }

  // Phase 2
  {
    std::map<std::string, std::size_t> label_count, label_ungrounded;
    std::vector<double> objects_per, grounded_per;
    std::map<std::string, std::size_t> per_video;
    std::size_t total = 0, grounded = 0, empty_sets = 0, sn = 0, sa = 0;
    for (const auto& g : in.grounded) {
      const auto it = subclips.find(g.subclip_id);
      if (it != subclips.end()) {
        ++per_video[it->second->video_id];
        ++(it->second->label == Label::Abnormal ? sa : sn);
      }
      objects_per.push_back(static_cast<double>(g.objects.size()));
      grounded_per.push_back(static_cast<double>(g.grounded_count()));
      if (g.grounded_count() == 0) ++empty_sets;
      for (const auto& o : g.objects) {
        ++total;
        ++label_count[o.annotation.label];
        if (o.grounded()) {
          ++grounded;
        } else {
          ++label_ungrounded[o.annotation.label];
        }
      }
    }
    std::size_t singletons = 0, rare = 0;
    std::vector<std::pair<std::string, std::size_t>> freq(label_count.begin(), label_count.end());
    for (const auto& [l, n] : freq) {
      if (n == 1) ++singletons;
      if (n >= 2 && n <= 5) ++rare;
    }
    std::stable_sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    json frequent = json::array();
    for (std::size_t i = 0; i < freq.size() && i < 9; ++i) frequent.push_back({{"label", freq[i].first}, {"count", freq[i].second}});

    std::vector<std::tuple<double, std::string, std::size_t, std::size_t>> ungrounded;
    for (const auto& [l, n] : label_count) {
      if (n >= 20) ungrounded.emplace_back(frac(label_ungrounded[l], n), l, label_ungrounded[l], n);
    }
    std::stable_sort(ungrounded.begin(), ungrounded.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    json worst = json::array();
    for (std::size_t i = 0; i < ungrounded.size() && i < 10; ++i) {
      const auto& [rate, l, u, n] = ungrounded[i];
      worst.push_back({{"label", l}, {"rate", rate}, {"ungrounded", u}, {"total", n}});
    }
    std::vector<double> per_video_counts;
    for (const auto& [id, n] : per_video) per_video_counts.push_back(static_cast<double>(n));

    out.phase2 = {{"samples", in.grounded.size()},
                  {"samples_normal", sn},
                  {"samples_abnormal", sa},
                  {"subclips_per_video", summary_json(summarize(per_video_counts))},
                  {"object_instances", total},
                  {"unique_labels", label_count.size()},
                  {"singleton_labels", singletons},
                  {"singleton_fraction", frac(singletons, label_count.size())},
                  {"rare_labels", rare},
                  {"rare_fraction", frac(rare, label_count.size())},
                  {"objects_per_subclip", summary_json(summarize(objects_per))},
                  {"grounded_per_subclip", summary_json(summarize(grounded_per))},
                  {"grounded_objects", grounded},
                  {"grounding_rate", frac(grounded, total)},
                  {"subclips_without_grounding", frac(empty_sets, in.grounded.size())},
                  {"most_frequent", frequent},
                  {"highest_ungrounded", worst}};
    std::size_t flagged_empty = 0, flagged_unparseable = 0, rejected_items = 0;
    for (const auto& n : in.narrations) {
      if (n.flag == "no_objects") ++flagged_empty;
      if (n.flag == "unparseable") ++flagged_unparseable;
      rejected_items += n.rejected.size();
    }
    out.phase2["narrations"] = in.narrations.size();
    out.phase2["narrations_no_objects"] = flagged_empty;
    out.phase2["narrations_unparseable"] = flagged_unparseable;
    out.phase2["narration_items_rejected"] = rejected_items;
  }

  // Phase 3
  {
    std::size_t an = 0, aa = 0, obs = 0, ana = 0, ans = 0, with_box = 0;
    std::vector<double> words, chars, obs_words, ana_words, boxes, objects;
    for (const auto& item : in.instructions) {
      ++(item.label == Label::Abnormal ? aa : an);
      const auto text = cot_text(item.assistant_response);
      words.push_back(static_cast<double>(word_count(text)));
      chars.push_back(static_cast<double>(text.size()));
      try {
        const auto p = cot::parse_cot(text);
        ++ans;
        if (p.has_observations) ++obs;
        if (p.has_analysis) ++ana;
        obs_words.push_back(static_cast<double>(word_count(p.observations)));
        ana_words.push_back(static_cast<double>(word_count(p.analysis)));
        boxes.push_back(static_cast<double>(p.boxes.size()));
        if (!p.boxes.empty()) ++with_box;
        std::set<std::string> described;
        for (const auto& b : p.boxes) {
          if (b.label) described.insert(*b.label);
        }
        objects.push_back(static_cast<double>(described.size()));
      } catch (const ParseError&) {
      }
    }
    const std::size_t n = in.instructions.size();
    out.phase3 = {{"cot_annotations", n},
                  {"answer_normal", an},
                  {"answer_abnormal", aa},
                  {"completeness_observations", frac(obs, n)},
                  {"completeness_analysis", frac(ana, n)},
                  {"completeness_answer", frac(ans, n)},
                  {"words", summary_json(summarize(words))},
                  {"characters", summary_json(summarize(chars))},
                  {"observation_words", summary_json(summarize(obs_words))},
                  {"analysis_words", summary_json(summarize(ana_words))},
                  {"objects_described", summary_json(summarize(objects))},
                  {"boxes_per_cot", summary_json(summarize(boxes))},
                  {"with_box_reference", frac(with_box, n)},
                  {"synthesis_rejections", in.failures.size()}};
  }
  return out;
}

json to_json(const DatasetStats& s) { return {{"phase1", s.phase1}, {"phase2", s.phase2}, {"phase3", s.phase3}}; }

std::string format_stats(const DatasetStats& s) {
  std::string out;
  char buf[256];
  auto row = [&](const char* name, const std::string& value) {
    std::snprintf(buf, sizeof buf, "  %-40s %s\n", name, value.c_str());
    out += buf;
  };
  auto num = [](double v, const char* fmt = "%.1f") {
    char b[64];
    std::snprintf(b, sizeof b, fmt, v);
    return std::string(b);
  };
  auto pct = [&](double v) { return num(100.0 * v) + "%"; };
  auto pair = [&](const json& summary, const char* fmt = "%.1f") {
    return num(summary["mean"].get<double>(), fmt) + " / " + num(summary["median"].get<double>(), fmt);
  };
  auto count = [](const json& v) { return std::to_string(v.get<std::size_t>()); };

  const auto& p1 = s.phase1;
  out += "Phase 1: subclipping\n";
  row("Videos (Normal / Abnormal)", count(p1["videos"]) + " (" + count(p1["videos_normal"]) + " / " +
                                        count(p1["videos_abnormal"]) + ")");
  row("Total subclips", count(p1["subclips"]));
  row("  Normal / Abnormal", count(p1["subclips_normal"]) + " / " + count(p1["subclips_abnormal"]));
  row("Subclips / video (mean / median)", pair(p1["subclips_per_video"]));
  row("Subclip duration, median", num(p1["duration_s"]["median"].get<double>()) + " s");
  row("  p25 / p75", num(p1["duration_s"]["p25"].get<double>()) + " s / " +
                         num(p1["duration_s"]["p75"].get<double>()) + " s");
  row("  <= 10 s", pct(p1["duration_le_10s"].get<double>()));
  row("  <= 30 s", pct(p1["duration_le_30s"].get<double>()));
  row("  <= 60 s", pct(p1["duration_le_60s"].get<double>()));

  const auto& p2 = s.phase2;
  out += "\nPhase 2: object grounding\n";
  row("Total samples (Normal / Abnormal)", count(p2["samples"]) + " (" + count(p2["samples_normal"]) + " / " +
                                               count(p2["samples_abnormal"]) + ")");
  row("Total object instances", count(p2["object_instances"]));
  row("Unique object labels", count(p2["unique_labels"]));
  row("  Singleton labels", count(p2["singleton_labels"]) + " (" + pct(p2["singleton_fraction"].get<double>()) + ")");
  row("  Rare labels (2-5 occurrences)", count(p2["rare_labels"]) + " (" + pct(p2["rare_fraction"].get<double>()) + ")");
  row("Objects / subclip (mean / median)", pair(p2["objects_per_subclip"]));
  row("Grounded with box (mean / median)", pair(p2["grounded_per_subclip"]));
  row("Grounding success rate", pct(p2["grounding_rate"].get<double>()) + " (" + count(p2["grounded_objects"]) +
                                    " of " + count(p2["object_instances"]) + ")");
  row("Subclips with no grounding", pct(p2["subclips_without_grounding"].get<double>()));

  const auto& p3 = s.phase3;
  out += "\nPhase 3: chain of thought\n";
  row("Total CoT annotations", count(p3["cot_annotations"]));
  row("  Answer: Normal / Abnormal", count(p3["answer_normal"]) + " / " + count(p3["answer_abnormal"]));
  row("Section completeness (Obs / Ana / Ans)", num(100.0 * p3["completeness_observations"].get<double>()) + " / " +
                                                    num(100.0 * p3["completeness_analysis"].get<double>()) + " / " +
                                                    num(100.0 * p3["completeness_answer"].get<double>()) + "%");
  row("Words (mean / median)", pair(p3["words"], "%.0f"));
  row("Characters (mean / median)", pair(p3["characters"], "%.0f"));
  row("p25 / p75 (words)", num(p3["words"]["p25"].get<double>(), "%.0f") + " / " +
                               num(p3["words"]["p75"].get<double>(), "%.0f"));
  row("Observations, words (mean / median)", pair(p3["observation_words"], "%.0f"));
  row("Analysis, words (mean / median)", pair(p3["analysis_words"], "%.0f"));
  row("Bbox coordinates / CoT (mean / median)", pair(p3["boxes_per_cot"]));
  row("CoTs with >= 1 bbox reference", pct(p3["with_box_reference"].get<double>()));
  return out;
}

// ---------------------------------------------------------------------------
// Training manifests

namespace {

// Seeded Fisher-Yates over ids sorted first, so the draw depends only on the
// set of ids and the seed.
std::vector<std::size_t> draw(std::vector<std::pair<std::string, std::size_t>> ids, std::size_t k,
                              std::uint64_t seed, const std::string& salt) {
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(fnv1a(salt, seed));
  for (std::size_t i = 0; i + 1 < ids.size() && i < k; ++i) {
    const std::size_t j = i + uniform_index(rng, ids.size() - i);
    std::swap(ids[i], ids[j]);
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k && i < ids.size(); ++i) out.push_back(ids[i].second);
  return out;
}

}  // namespace

AssembleResult assemble(const AssembleInput& in, const RunConfig& cfg) {
  AssembleResult out;
  for (const auto& stage : cfg.stages) {
    std::vector<ManifestEntry> entries;
    auto add = [&](const std::string& id, const char* modality, Label label) {
      entries.push_back({stage.stage, stage.name, id, modality, label});
    };
    const double det_pct = stage.detection_pct, cot_pct = stage.cot_pct;

    if (det_pct == 0.0 && cot_pct == 0.0) {
      for (const auto& v : in.videos) add(v.video_id, "video_label", v.label);
    } else if (det_pct == 0.0) {
      for (const auto& item : in.instructions) add(item.subclip_id, "video_cot", item.label);
    } else if (cot_pct == 0.0) {
      for (const auto& d : in.detections) add(d.sample_id, "image_detection", d.label);
    } else {
      // Largest total whose floor(total * det share) detections and the rest
      // as CoT items both fit in what is available.
      const std::size_t avail_d = in.detections.size(), avail_c = in.instructions.size();
      const double share = det_pct / (det_pct + cot_pct);
      std::size_t total = avail_d + avail_c;
      if (stage.stage == 2 && cfg.stage2_slots) total = std::min(total, *cfg.stage2_slots);
      std::size_t nd = 0, nc = 0;
      for (; total > 0; --total) {
        nd = static_cast<std::size_t>(std::floor(static_cast<double>(total) * share + 1e-9));
        nc = total - nd;
        if (nd <= avail_d && nc <= avail_c) break;
      }
      if (total == 0) nd = nc = 0;
      std::vector<std::pair<std::string, std::size_t>> dids, cids;
      for (std::size_t i = 0; i < avail_d; ++i) dids.emplace_back(in.detections[i].sample_id, i);
      for (std::size_t i = 0; i < avail_c; ++i) cids.emplace_back(in.instructions[i].subclip_id, i);
      const std::string salt = "stage" + std::to_string(stage.stage) + ":" + stage.name;
      for (auto i : draw(dids, nd, cfg.seed, salt + ":image_detection")) {
        add(in.detections[i].sample_id, "image_detection", in.detections[i].label);
      }
      for (auto i : draw(cids, nc, cfg.seed, salt + ":video_cot")) {
        add(in.instructions[i].subclip_id, "video_cot", in.instructions[i].label);
      }
    }
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      return std::tie(a.modality, a.sample_id) < std::tie(b.modality, b.sample_id);
    });
    for (const auto& e : entries) ++out.counts[std::to_string(e.stage) + ":" + e.stage_name + ":" + e.modality];
    out.entries.insert(out.entries.end(), entries.begin(), entries.end());
  }
  return out;
}

}  // namespace vanguard::datastore
