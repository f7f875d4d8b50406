#include "vanguard/pipeline.hpp"

#include <cstdio>

namespace vanguard::pipeline {

Clients make_clients(const datastore::RunConfig& cfg, const ClientOptions& options) {
  Clients out;
  if (options.archive) out.archive = std::make_shared<clients::Archive>();

  std::optional<clients::MockSuite> suite;
  auto transport = [&](const datastore::EndpointConfig& e,
                       std::shared_ptr<clients::MockTransport> clients::MockSuite::*member)
      -> std::shared_ptr<clients::Transport> {
    if (e.url.rfind("mock://", 0) == 0) {
      if (!suite) {
        auto mock = options.mock;
        mock.seed = cfg.seed;
        if (cfg.embed_dim) mock.embed_dim = cfg.embed_dim;
        suite = clients::mock_suite(mock);
      }
      return (*suite).*member;
    }
    return std::make_shared<clients::HttpTransport>(e.url);
  };
  auto endpoint = [&](const datastore::EndpointConfig& e) {
    clients::ServiceEndpoint ep;
    ep.base_url = e.url;
    ep.timeout_s = e.timeout_s;
    ep.max_retries = e.max_retries;
    ep.max_in_flight = e.max_in_flight;
    ep.auth_token = options.auth_token;
    return ep;
  };

  out.vlm = std::make_unique<clients::VlmClient>(endpoint(cfg.vlm), transport(cfg.vlm, &clients::MockSuite::vlm),
                                                 out.archive);
  out.detector = std::make_unique<clients::DetectorClient>(
      endpoint(cfg.detector), transport(cfg.detector, &clients::MockSuite::detector), out.archive);
  out.embed = std::make_unique<clients::EmbedClient>(
      endpoint(cfg.embed), transport(cfg.embed, &clients::MockSuite::embed), out.archive, cfg.embed_dim);
  return out;
}

Corpus generate_mock_corpus(const clients::MockWorld& world, std::size_t n_videos) {
  static const char* kCategories[] = {"Arrest",    "Abuse",  "Arson",         "Assault",  "Burglary",
                                      "Explosion", "Fighting", "RoadAccidents", "Robbery", "Shooting",
                                      "Shoplifting", "Stealing", "Vandalism"};
  constexpr std::size_t kNumCategories = std::size(kCategories);
  const std::size_t n_abnormal = (n_videos + 1) / 2;
  std::vector<std::pair<std::string, std::string>> names;  // (name, category)
  for (std::size_t i = 0; i < n_abnormal; ++i) {
    const char* cat = kCategories[i % kNumCategories];
    char buf[64];
    // Arrest002 first; later Arrest videos continue from 003.
    const std::size_t number = i / kNumCategories + (i % kNumCategories == 0 ? 2 : 1);
    std::snprintf(buf, sizeof buf, "%s%03zu", cat, number);
    names.emplace_back(buf, cat);
  }
  for (std::size_t i = 0; i < n_videos - n_abnormal; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "Normal_Videos_%03zu", i + 1);
    names.emplace_back(buf, "Normal");
  }

  Corpus out;
  constexpr double kFps = 30.0;
  for (const auto& [name, category] : names) {
    const auto v = world.video("mock://ucf/" + name + ".mp4");
    datastore::VideoRecord rec;
    rec.video_id = name;
    rec.uri = v.uri;
    rec.total_frames = v.total_frames;
    rec.fps = kFps;
    rec.label = v.label;
    rec.category = category;
    for (const auto& [a, b] : v.anomalous) rec.anomalous.push_back({a, b});
    out.videos.push_back(rec);

    for (const auto& o : v.objects) {
      if (o.abnormal || o.scene_level) continue;
      out.sentences.push_back({name, 0.0, 0.3 * static_cast<double>(v.total_frames) / kFps,
                               "The camera shows a " + o.label + " " + o.reason + "."});
      break;
    }
    for (const auto& [a, b] : v.anomalous) {
      for (const auto& o : v.objects) {
        if (!o.abnormal) continue;
        out.sentences.push_back({name, static_cast<double>(a) / kFps, static_cast<double>(b + 1) / kFps,
                                 "A " + o.label + " is " + o.reason + "."});
        break;
      }
    }
  }
  return out;
}

std::vector<scene_gate::SubclipRecord> segment_video(const datastore::VideoRecord& video,
                                                     clients::EmbedClient& embed,
                                                     const scene_gate::GateConfig& gate) {
  gate.validate();
  std::vector<scene_gate::EmbeddingSample> stream;
  for (std::int64_t f = 0; f < video.total_frames; f += gate.stride) {
    stream.push_back({f, embed.embed({video.uri, f, std::nullopt, std::nullopt}).embedding});
  }
  auto subclips = scene_gate::segment(video.video_id, stream, video.total_frames, gate);
  scene_gate::label_subclips(subclips, video.anomalous);
  return subclips;
}

Lookup::Lookup(const std::vector<datastore::VideoRecord>& v,
               const std::vector<narration::AnnotationSentence>& s) {
  for (const auto& x : v) videos[x.video_id] = &x;
  for (const auto& x : s) sentences[x.video_id].push_back(&x);
}

const datastore::VideoRecord& Lookup::video(const std::string& id) const {
  const auto it = videos.find(id);
  if (it == videos.end()) throw SchemaError("unknown video_id " + id);
  return *it->second;
}

std::string Lookup::annotations_text(const scene_gate::SubclipRecord& subclip, double min_overlap) const {
  std::vector<narration::AnnotationSentence> own;
  if (const auto it = sentences.find(subclip.video_id); it != sentences.end()) {
    for (const auto* s : it->second) own.push_back(*s);
  }
  return narration::align_annotations(own, subclip, video(subclip.video_id).fps, min_overlap);
}

std::vector<narration::NarrationResult> narrate(const std::vector<scene_gate::SubclipRecord>& subclips,
                                                const Lookup& lookup, clients::VlmClient& vlm,
                                                const datastore::RunConfig& cfg, std::size_t workers) {
  return parallel_map(subclips.size(), workers, [&](std::size_t i) {
    const auto& s = subclips[i];
    const auto& v = lookup.video(s.video_id);
    const clients::MediaRef media{v.uri, std::nullopt, s.start_frame, s.end_frame};
    return narration::narrate_subclip(media, s.id(), lookup.annotations_text(s, cfg.min_overlap_fraction), vlm,
                                      cfg.narration);
  });
}

std::vector<grounding::GroundedSet> ground(const std::vector<scene_gate::SubclipRecord>& subclips,
                                           const std::vector<narration::NarrationResult>& narrations,
                                           const Lookup& lookup, clients::DetectorClient& detector,
                                           const datastore::RunConfig& cfg, std::size_t workers) {
  std::map<std::string, const narration::NarrationResult*> by_id;
  for (const auto& n : narrations) by_id[n.subclip_id] = &n;
  std::vector<std::pair<const scene_gate::SubclipRecord*, const narration::NarrationResult*>> jobs;
  for (const auto& s : subclips) {
    if (auto it = by_id.find(s.id()); it != by_id.end()) jobs.emplace_back(&s, it->second);
  }
  return parallel_map(jobs.size(), workers, [&](std::size_t i) {
    const auto& [s, n] = jobs[i];
    return grounding::ground_subclip(lookup.video(s->video_id).uri, *s, n->objects, detector, cfg.grounding);
  });
}

SynthOutput synthesize(const std::vector<scene_gate::SubclipRecord>& subclips,
                       const std::vector<grounding::GroundedSet>& grounded, const Lookup& lookup,
                       clients::VlmClient& vlm, const datastore::RunConfig& cfg, std::size_t workers) {
  std::map<std::string, const grounding::GroundedSet*> by_id;
  for (const auto& g : grounded) by_id[g.subclip_id] = &g;
  std::vector<std::pair<const scene_gate::SubclipRecord*, const grounding::GroundedSet*>> jobs;
  for (const auto& s : subclips) {
    if (auto it = by_id.find(s.id()); it != by_id.end()) jobs.emplace_back(&s, it->second);
  }
  auto results = parallel_map(jobs.size(), workers, [&](std::size_t i) {
    const auto& [s, g] = jobs[i];
    const auto& v = lookup.video(s->video_id);
    const clients::MediaRef media{v.uri, std::nullopt, s->start_frame, s->end_frame};
    return cot::synthesize(media, *g, lookup.annotations_text(*s, cfg.min_overlap_fraction), s->label, vlm,
                           cfg.synthesis);
  });
  SynthOutput out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    auto& r = results[i];
    if (r.item) {
      out.items.push_back(std::move(*r.item));
    } else {
      out.failures.push_back({jobs[i].first->id(), r.rejection.value_or("no reply"), r.attempts});
    }
  }
  return out;
}

}  // namespace vanguard::pipeline
