#pragma once

#include <atomic>
#include <exception>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vanguard/clients.hpp"
#include "vanguard/cot.hpp"
#include "vanguard/datastore.hpp"
#include "vanguard/grounding.hpp"
#include "vanguard/narration.hpp"
#include "vanguard/scene_gate.hpp"

namespace vanguard::pipeline {

/// Runs fn(i) for i in [0, n) on up to `workers` threads and returns the
/// results in index order. The exception of the lowest failing index is
/// rethrown after every task has finished.
template <class F>
auto parallel_map(std::size_t n, std::size_t workers, F fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, n));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct Clients {
  std::shared_ptr<clients::Archive> archive;  // null unless archiving
  std::unique_ptr<clients::VlmClient> vlm;
  std::unique_ptr<clients::DetectorClient> detector;
  std::unique_ptr<clients::EmbedClient> embed;
};

struct ClientOptions {
  bool archive = false;
  std::optional<std::string> auth_token;
  clients::MockOptions mock;  // used for "mock://" endpoints; seed is overridden by the run seed
};

/// Endpoints whose url starts with "mock://" get the in-process mock
/// services; anything else goes over HTTP.
Clients make_clients(const datastore::RunConfig& cfg, const ClientOptions& options);

struct Corpus {
  std::vector<datastore::VideoRecord> videos;
  std::vector<narration::AnnotationSentence> sentences;
};

/// Half Normal, half Abnormal videos drawn from the mock world; the first
/// abnormal video is always Arrest002.
Corpus generate_mock_corpus(const clients::MockWorld& world, std::size_t n_videos);

/// Embeds frames 0, stride, 2*stride, ... and segments the video; subclips
/// are labelled from the video's anomalous intervals.
std::vector<scene_gate::SubclipRecord> segment_video(const datastore::VideoRecord& video,
                                                     clients::EmbedClient& embed,
                                                     const scene_gate::GateConfig& gate);

struct Lookup {
  std::map<std::string, const datastore::VideoRecord*> videos;
  std::map<std::string, std::vector<const narration::AnnotationSentence*>> sentences;

  Lookup(const std::vector<datastore::VideoRecord>& v, const std::vector<narration::AnnotationSentence>& s);
  /// Throws SchemaError for an unknown video id.
  const datastore::VideoRecord& video(const std::string& id) const;
  std::string annotations_text(const scene_gate::SubclipRecord& subclip, double min_overlap) const;
};

std::vector<narration::NarrationResult> narrate(const std::vector<scene_gate::SubclipRecord>& subclips,
                                                const Lookup& lookup, clients::VlmClient& vlm,
                                                const datastore::RunConfig& cfg, std::size_t workers);

/// Subclips without a narration record are skipped.
std::vector<grounding::GroundedSet> ground(const std::vector<scene_gate::SubclipRecord>& subclips,
                                           const std::vector<narration::NarrationResult>& narrations,
                                           const Lookup& lookup, clients::DetectorClient& detector,
                                           const datastore::RunConfig& cfg, std::size_t workers);

struct SynthOutput {
  std::vector<cot::InstructionItem> items;
  std::vector<datastore::SynthesisFailure> failures;
};

SynthOutput synthesize(const std::vector<scene_gate::SubclipRecord>& subclips,
                       const std::vector<grounding::GroundedSet>& grounded, const Lookup& lookup,
                       clients::VlmClient& vlm, const datastore::RunConfig& cfg, std::size_t workers);

}  // namespace vanguard::pipeline
