#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vanguard/clients.hpp"
#include "vanguard/cot.hpp"
#include "vanguard/grounding.hpp"
#include "vanguard/loss.hpp"
#include "vanguard/metrics.hpp"
#include "vanguard/narration.hpp"
#include "vanguard/scene_gate.hpp"

namespace vanguard::datastore {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSONL

/// One JSON value per line. Blank lines are skipped; anything unparsable
/// throws SchemaError carrying the 1-based line number. A missing file throws
/// std::runtime_error.
std::vector<json> read_jsonl(const std::filesystem::path& path);
/// Same, paired with each record's line number.
std::vector<std::pair<std::size_t, json>> read_jsonl_numbered(const std::filesystem::path& path);

/// Compact one-line dumps joined by '\n', written to a temp file then renamed.
void write_jsonl(const std::filesystem::path& path, std::span<const json> records);

/// Atomic write of arbitrary text.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Reads and converts every line with `convert`, rethrowing its SchemaError
/// (or any std::exception) with the line number attached.
template <class T>
std::vector<T> read_records(const std::filesystem::path& path, T (*convert)(const json&));

// ---------------------------------------------------------------------------
// Record schemas

struct VideoRecord {
  std::string video_id;
  std::string uri;
  std::int64_t total_frames = 0;
  double fps = 30.0;
  Label label = Label::Normal;
  std::string category;
  std::vector<scene_gate::FrameInterval> anomalous;
};

json to_json(const VideoRecord& v);
VideoRecord video_from_json(const json& j);

json to_json(const narration::AnnotationSentence& s);
narration::AnnotationSentence sentence_from_json(const json& j);

json to_json(const scene_gate::SubclipRecord& s);
scene_gate::SubclipRecord subclip_from_json(const json& j);

json to_json(const narration::NarrationResult& r);
narration::NarrationResult narration_from_json(const json& j);

json to_json(const grounding::GroundedSet& g);
grounding::GroundedSet grounded_from_json(const json& j);

json to_json(const cot::InstructionItem& item);
cot::InstructionItem instruction_from_json(const json& j);

/// Chain-of-thought rejection kept for the statistics.
struct SynthesisFailure {
  std::string subclip_id;
  std::string reason;
  int attempts = 0;
};
json to_json(const SynthesisFailure& f);
SynthesisFailure failure_from_json(const json& j);

/// Image-level detection sample built from a grounded set.
struct DetectionItem {
  std::string sample_id;  // "<subclip id>@<anchor frame>"
  std::string subclip_id;
  clients::MediaRef image;
  Label label = Label::Normal;
  std::string system;
  std::string user;
  std::string target;  // JSON text the model should produce
};
json to_json(const DetectionItem& d);
DetectionItem detection_item_from_json(const json& j);

/// Returns nothing when the set has no grounded object.
std::optional<DetectionItem> make_detection_item(const grounding::GroundedSet& set,
                                                 const std::string& video_uri, Label label);

struct ManifestEntry {
  int stage = 1;
  std::string stage_name;
  std::string sample_id;
  std::string modality;  // "video_label", "image_detection" or "video_cot"
  Label label = Label::Normal;
};
json to_json(const ManifestEntry& e);
ManifestEntry manifest_from_json(const json& j);

enum class Schema { Videos, Sentences, Subclips, Annotations, Grounded, Instructions, Detections, Manifest, Eval };
std::optional<Schema> parse_schema(std::string_view name);
/// Validates every record of `path` against `schema`; returns the count.
std::size_t validate_file(const std::filesystem::path& path, Schema schema);

// ---------------------------------------------------------------------------
// Run configuration

struct EndpointConfig {
  std::string url = "mock://";
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
};

struct RunConfig {
  std::uint64_t seed = 42;
  scene_gate::GateConfig gate;
  grounding::GroundingConfig grounding;
  scene_gate::SubsamplePolicy subsample;
  narration::NarrationConfig narration;
  cot::SynthesisConfig synthesis;
  double min_overlap_fraction = 0.0;  // sentence-to-subclip alignment
  std::vector<loss::StageConfig> stages = loss::curriculum_stages();
  std::size_t steps_per_epoch = 262;
  std::optional<std::size_t> stage2_slots;  // cap on the stage-2 mixture size
  EndpointConfig vlm, detector, embed;
  std::size_t embed_dim = 0;  // 0 = accept any dimension
  bool archive = false;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys throw SchemaError.
RunConfig config_from_json(const json& j);
RunConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Statistics

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double p25 = 0.0;
  double p75 = 0.0;
  std::size_t count = 0;
};

/// Median averages the two middle values; percentiles use nearest rank.
Summary summarize(std::vector<double> values);
double nearest_rank(std::span<const double> sorted, double percentile);

struct DatasetStats {
  json phase1, phase2, phase3;
};

struct StatsInput {
  std::vector<VideoRecord> videos;
  std::vector<scene_gate::SubclipRecord> subclips;
  std::vector<narration::NarrationResult> narrations;
  std::vector<grounding::GroundedSet> grounded;
  std::vector<cot::InstructionItem> instructions;
  std::vector<SynthesisFailure> failures;
  double fps = 30.0;  // used when a subclip's video is unknown
};

DatasetStats compute_stats(const StatsInput& in);
json to_json(const DatasetStats& s);
std::string format_stats(const DatasetStats& s);

// ---------------------------------------------------------------------------
// Training manifests

struct AssembleInput {
  std::vector<VideoRecord> videos;
  std::vector<DetectionItem> detections;
  std::vector<cot::InstructionItem> instructions;
};

struct AssembleResult {
  std::vector<ManifestEntry> entries;  // stage order, then sample id
  std::map<std::string, std::size_t> counts;  // "<stage>:<modality>" -> n
};

/// Stages with no mixture train on video/label pairs; stages with only a CoT
/// share take every instruction item; mixed stages draw the largest set whose
/// split matches the configured percentages, sampled with the run seed.
AssembleResult assemble(const AssembleInput& in, const RunConfig& cfg);

// ---------------------------------------------------------------------------

template <class T>
std::vector<T> read_records(const std::filesystem::path& path, T (*convert)(const json&)) {
  const auto rows = read_jsonl_numbered(path);
  std::vector<T> out;
  out.reserve(rows.size());
  for (const auto& [line, row] : rows) {
    try {
      out.push_back(convert(row));
    } catch (const std::exception& e) {
      throw SchemaError(e.what(), line);
    }
  }
  return out;
}

}  // namespace vanguard::datastore
