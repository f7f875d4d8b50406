#include "vanguard/cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vanguard/clients.hpp"
#include "vanguard/datastore.hpp"
#include "vanguard/loss.hpp"
#include "vanguard/metrics.hpp"
#include "vanguard/pipeline.hpp"
#include "vanguard/scene_gate.hpp"

namespace vanguard::cli {
namespace {

namespace fs = std::filesystem;
namespace ds = datastore;
using nlohmann::json;

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A check (loss-check tolerance, validate) ran and failed.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const fs::path& need(const fs::path& p) {
  if (!fs::exists(p)) throw MissingInput("no such file: " + p.string());
  return p;
}

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string archive;
  std::size_t workers = 4;
  std::string fixtures;
};

ds::RunConfig load_run_config(const Shared& sh) {
  ds::RunConfig cfg;
  if (!sh.config.empty()) cfg = ds::load_config(need(sh.config));
  if (sh.seed) {
    cfg.seed = *sh.seed;
    cfg.subsample.seed = *sh.seed;
  }
  auto env = [](const char* name, std::string& dst) {
    if (const char* v = std::getenv(name); v && *v) dst = v;
  };
  env("VANGUARD_VLM_URL", cfg.vlm.url);
  env("VANGUARD_DETECTOR_URL", cfg.detector.url);
  env("VANGUARD_EMBED_URL", cfg.embed.url);
  cfg.validate();
  return cfg;
}

// Builds clients and writes the transcript when the command finishes, even on
// failure.
class Session {
 public:
  Session(const Shared& sh, const ds::RunConfig& cfg, const std::string& out) {
    if (!sh.archive.empty()) {
      archive_path_ = sh.archive;
    } else if (cfg.archive && !out.empty()) {
      archive_path_ = out + ".archive.jsonl";
    }
    pipeline::ClientOptions opts;
    opts.archive = !archive_path_.empty();
    if (const char* tok = std::getenv("VANGUARD_API_TOKEN"); tok && *tok) opts.auth_token = tok;
    if (!sh.fixtures.empty()) clients::load_narration_fixtures(need(sh.fixtures), opts.mock);
    clients_ = pipeline::make_clients(cfg, opts);
  }
  ~Session() {
    if (clients_.archive && !archive_path_.empty()) {
      try {
        clients_.archive->write(archive_path_);
      } catch (...) {
      }
    }
  }
  pipeline::Clients& clients() { return clients_; }

 private:
  fs::path archive_path_;
  pipeline::Clients clients_;
};

template <class T>
void write_records(const fs::path& path, const std::vector<T>& items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const auto& x : items) rows.push_back(ds::to_json(x));
  ds::write_jsonl(path, rows);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_mock_corpus(const Shared& sh, std::size_t n, const std::string& out_dir, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  const clients::MockWorld world(cfg.seed);
  const auto corpus = pipeline::generate_mock_corpus(world, n);
  write_records(fs::path(out_dir) / "videos.jsonl", corpus.videos);
  write_records(fs::path(out_dir) / "sentences.jsonl", corpus.sentences);
  out << corpus.videos.size() << " videos, " << corpus.sentences.size() << " sentences\n";
  return kOk;
}

struct StreamInput {
  std::string video_id;
  std::optional<std::int64_t> total_frames;
  Label label = Label::Normal;
  std::vector<scene_gate::EmbeddingSample> samples;
};

scene_gate::EmbeddingSample sample_from_json(const json& j) {
  scene_gate::EmbeddingSample s;
  s.frame_index = j.at("frame_index").get<std::int64_t>();
  s.embedding = j.at("embedding").get<std::vector<double>>();
  return s;
}

Label label_field(const json& j) {
  if (!j.contains("label")) return Label::Normal;
  const auto l = parse_label(j.at("label").get<std::string>());
  if (!l) throw SchemaError("label must be Normal or Abnormal");
  return *l;
}

// Lines are samples {video_id, frame_index, embedding} or per-video headers
// {video_id, total_frames?, label?}. Videos keep first-appearance order.
std::vector<StreamInput> read_streams(const fs::path& path) {
  std::vector<StreamInput> out;
  std::map<std::string, std::size_t> index;
  for (const auto& [line, j] : ds::read_jsonl_numbered(need(path))) {
    try {
      const auto id = j.at("video_id").get<std::string>();
      auto [it, fresh] = index.try_emplace(id, out.size());
      if (fresh) out.push_back({id, std::nullopt, Label::Normal, {}});
      auto& s = out[it->second];
      if (j.contains("frame_index")) {
        s.samples.push_back(sample_from_json(j));
      } else {
        if (j.contains("total_frames")) s.total_frames = j.at("total_frames").get<std::int64_t>();
        s.label = label_field(j);
      }
    } catch (const SchemaError& e) {
      throw SchemaError(e.what(), line);
    } catch (const json::exception& e) {
      throw SchemaError(e.what(), line);
    }
  }
  return out;
}

int cmd_segment(const Shared& sh, const std::string& videos, const std::string& streams, bool all,
                const std::string& out_path, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  std::vector<std::vector<scene_gate::SubclipRecord>> per_video;
  if (!streams.empty()) {
    for (const auto& s : read_streams(streams)) {
      const auto total = s.total_frames.value_or(s.samples.empty() ? 1 : s.samples.back().frame_index + cfg.gate.stride);
      per_video.push_back(scene_gate::segment(s.video_id, s.samples, total, cfg.gate, s.label));
    }
  } else {
    const auto vids = ds::read_records(need(videos), &ds::video_from_json);
    Session session(sh, cfg, out_path);
    auto& embed = *session.clients().embed;
    per_video = pipeline::parallel_map(vids.size(), sh.workers, [&](std::size_t i) {
      return pipeline::segment_video(vids[i], embed, cfg.gate);
    });
  }
  std::vector<scene_gate::SubclipRecord> result;
  std::size_t total = 0;
  for (const auto& v : per_video) total += v.size();
  if (all || !streams.empty()) {
    for (const auto& v : per_video) result.insert(result.end(), v.begin(), v.end());
  } else {
    result = scene_gate::subsample(per_video, cfg.subsample);
  }
  write_records(out_path, result);
  out << per_video.size() << " videos, " << total << " subclips, " << result.size() << " written\n";
  return kOk;
}

int cmd_narrate(const Shared& sh, const std::string& subclips_path, const std::string& videos_path,
                const std::string& sentences_path, const std::string& out_path, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  const auto subclips = ds::read_records(need(subclips_path), &ds::subclip_from_json);
  const auto videos = ds::read_records(need(videos_path), &ds::video_from_json);
  std::vector<narration::AnnotationSentence> sentences;
  if (!sentences_path.empty()) sentences = ds::read_records(need(sentences_path), &ds::sentence_from_json);
  const pipeline::Lookup lookup(videos, sentences);
  Session session(sh, cfg, out_path);
  const auto results = pipeline::narrate(subclips, lookup, *session.clients().vlm, cfg, sh.workers);
  write_records(out_path, results);
  std::size_t objects = 0, rejected = 0;
  for (const auto& r : results) {
    objects += r.objects.size();
    rejected += r.rejected.size();
  }
  out << results.size() << " subclips narrated, " << objects << " objects, " << rejected << " rejected\n";
  return kOk;
}

int cmd_ground(const Shared& sh, const std::string& subclips_path, const std::string& videos_path,
               const std::string& annotations_path, const std::string& out_path, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  const auto subclips = ds::read_records(need(subclips_path), &ds::subclip_from_json);
  const auto videos = ds::read_records(need(videos_path), &ds::video_from_json);
  const auto narrations = ds::read_records(need(annotations_path), &ds::narration_from_json);
  const pipeline::Lookup lookup(videos, {});
  Session session(sh, cfg, out_path);
  const auto sets = pipeline::ground(subclips, narrations, lookup, *session.clients().detector, cfg, sh.workers);
  write_records(out_path, sets);
  const auto rate = grounding::grounding_rate(sets);
  out << sets.size() << " sets, " << rate.grounded << "/" << rate.total << " objects grounded\n";
  return kOk;
}

int cmd_synth(const Shared& sh, const std::string& subclips_path, const std::string& videos_path,
              const std::string& sentences_path, const std::string& grounded_path, const std::string& out_path,
              const std::string& failures_path, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  const auto subclips = ds::read_records(need(subclips_path), &ds::subclip_from_json);
  const auto videos = ds::read_records(need(videos_path), &ds::video_from_json);
  std::vector<narration::AnnotationSentence> sentences;
  if (!sentences_path.empty()) sentences = ds::read_records(need(sentences_path), &ds::sentence_from_json);
  const auto grounded = ds::read_records(need(grounded_path), &ds::grounded_from_json);
  const pipeline::Lookup lookup(videos, sentences);
  Session session(sh, cfg, out_path);
  const auto res = pipeline::synthesize(subclips, grounded, lookup, *session.clients().vlm, cfg, sh.workers);
  write_records(out_path, res.items);
  if (!failures_path.empty()) write_records(failures_path, res.failures);
  out << res.items.size() << " instruction items, " << res.failures.size() << " rejected\n";
  return kOk;
}

int cmd_assemble(const Shared& sh, const std::string& videos_path, const std::string& subclips_path,
                 const std::string& grounded_path, const std::string& instructions_path,
                 const std::string& out_dir, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  ds::AssembleInput in;
  in.videos = ds::read_records(need(videos_path), &ds::video_from_json);
  if (!grounded_path.empty()) {
    const auto subclips = ds::read_records(need(subclips_path), &ds::subclip_from_json);
    const pipeline::Lookup lookup(in.videos, {});
    std::map<std::string, const scene_gate::SubclipRecord*> by_id;
    for (const auto& s : subclips) by_id[s.id()] = &s;
    for (const auto& g : ds::read_records(need(grounded_path), &ds::grounded_from_json)) {
      const auto it = by_id.find(g.subclip_id);
      if (it == by_id.end()) throw SchemaError("grounded set references unknown subclip " + g.subclip_id);
      const auto& s = *it->second;
      if (auto d = ds::make_detection_item(g, lookup.video(s.video_id).uri, s.label)) {
        in.detections.push_back(std::move(*d));
      }
    }
  }
  if (!instructions_path.empty()) {
    in.instructions = ds::read_records(need(instructions_path), &ds::instruction_from_json);
  }
  const auto res = ds::assemble(in, cfg);
  const fs::path dir(out_dir);
  write_records(dir / "detections.jsonl", in.detections);
  write_records(dir / "manifest.jsonl", res.entries);
  ds::write_text(dir / "manifest_counts.json", json(res.counts).dump(2) + "\n");
  for (const auto& [key, n] : res.counts) out << key << " " << n << "\n";
  return kOk;
}

std::vector<metrics::EvalRecord> read_eval(const std::string& path) {
  return ds::read_records(need(path), &metrics::eval_record_from_json);
}

int cmd_eval_cls(const std::string& records, const std::string& out_path, std::ostream& out) {
  const auto recs = read_eval(records);
  const auto report = metrics::evaluate(recs);
  out << metrics::format_report(report);
  if (!out_path.empty()) ds::write_text(out_path, metrics::to_json(report).dump(2) + "\n");
  return kOk;
}

int cmd_eval_grounding(const std::string& records, bool penalize, double threshold, const std::string& out_path,
                       std::ostream& out) {
  const auto recs = read_eval(records);
  std::vector<metrics::SampleBoxes> samples;
  for (const auto& r : recs) {
    if (!r.gt_boxes) continue;
    samples.push_back({r.pred_boxes.value_or(std::vector<geometry::Box>{}), *r.gt_boxes});
  }
  if (samples.empty()) throw UndefinedMetric("no record carries gt_boxes");
  const double miou = metrics::mean_iou(samples, penalize);
  const double rec = metrics::recall_at(samples, threshold);
  out << "samples " << samples.size() << "\n"
      << "mIoU " << fmt("%.4f", miou) << "\n"
      << "R@" << fmt("%g", threshold) << " " << fmt("%.4f", rec) << "\n";
  if (!out_path.empty()) {
    const json j = {{"samples", samples.size()},
                    {"mean_iou", miou},
                    {"recall", rec},
                    {"recall_iou", threshold},
                    {"penalize_unmatched", penalize}};
    ds::write_text(out_path, j.dump(2) + "\n");
  }
  return kOk;
}

// Fixture lines: {"kind":"bce","logits":[..],"labels":[..],"expected":x}
// {"kind":"lm","logits":[[..]],"targets":[..],"mask":[..],"expected":x}
// {"kind":"giou","boxes":[{"coords":[[[10 logits]..]x4],"target":[4],"label":".."}],"expected":x}
double fixture_value(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "bce") {
    return loss::bce({j.at("logits").get<std::vector<double>>(), j.at("labels").get<std::vector<int>>()});
  }
  if (kind == "lm") {
    loss::TokenBatch b;
    b.logits = j.at("logits").get<std::vector<std::vector<double>>>();
    b.targets = j.at("targets").get<std::vector<std::size_t>>();
    for (const auto& m : j.at("mask")) b.mask.push_back(m.get<bool>());
    return loss::masked_lm_ce(b).loss;
  }
  if (kind == "giou") {
    std::vector<loss::DigitLogitBox> boxes;
    for (const auto& bj : j.at("boxes")) {
      loss::DigitLogitBox b;
      const auto& coords = bj.at("coords");
      if (coords.size() != 4) throw SchemaError("giou box needs four coordinates");
      for (std::size_t c = 0; c < 4; ++c) b.coords[c] = coords[c].get<loss::DigitLogits>();
      const auto t = bj.at("target").get<std::vector<int>>();
      if (t.size() != 4) throw SchemaError("giou target needs four bins");
      b.target = geometry::BinBox::make(t[0], t[1], t[2], t[3]);
      b.label = bj.value("label", std::string("object"));
      boxes.push_back(std::move(b));
    }
    return loss::giou_loss(boxes).loss;
  }
  throw SchemaError("unknown loss kind " + kind);
}

int cmd_loss_check(const Shared& sh, std::size_t configs, double step, double tolerance,
                   const std::string& fixtures, std::ostream& out) {
  const auto seed = sh.seed.value_or(42);
  bool ok = true;
  if (!fixtures.empty()) {
    std::size_t i = 0;
    for (const auto& [line, j] : ds::read_jsonl_numbered(need(fixtures))) {
      double got = 0.0, want = 0.0;
      try {
        got = fixture_value(j);
        want = j.at("expected").get<double>();
      } catch (const json::exception& e) {
        throw SchemaError(e.what(), line);
      }
      const bool good = std::abs(got - want) <= 1e-9 * std::max(1.0, std::abs(want));
      ok = ok && good;
      out << "fixture " << ++i << " " << j.at("kind").get<std::string>() << ": " << fmt("%.12g", got)
          << " expected " << fmt("%.12g", want) << (good ? " ok" : " MISMATCH") << "\n";
    }
  }
  const auto check = loss::check_giou_gradient(configs, seed, step);
  out << "giou gradient: " << check.configs << " configs, " << check.parameters << " parameters\n"
      << "max relative error " << fmt("%.3e", check.max_rel_error) << "\n"
      << "max absolute error " << fmt("%.3e", check.max_abs_error) << "\n";
  if (!(check.max_rel_error <= tolerance)) {
    throw CheckFailed("max relative error " + fmt("%.3e", check.max_rel_error) + " above " + fmt("%.1e", tolerance));
  }
  if (!ok) throw CheckFailed("loss fixture mismatch");
  return kOk;
}

int cmd_plan(const Shared& sh, bool joint, const std::string& out_path, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  const auto schedule = joint ? loss::joint_schedule() : cfg.stages;
  const auto spe = cfg.steps_per_epoch;

  out << "stage  name                  l_bce  l_lm  l_giou  epochs  peak_lr  warmup  det%  cot%\n";
  json stages = json::array();
  for (const auto& s : schedule) {
    char row[256];
    std::snprintf(row, sizeof row, "%-6d %-21s %-6g %-5g %-7g %-7d %-8g %-7g %-5g %g\n", s.stage, s.name.c_str(),
                  s.lambda_bce, s.lambda_lm, s.lambda_giou, s.epochs, s.peak_lr, s.warmup_ratio, s.detection_pct,
                  s.cot_pct);
    out << row;
    stages.push_back({{"stage", s.stage},
                      {"name", s.name},
                      {"lambda", {s.lambda_bce, s.lambda_lm, s.lambda_giou}},
                      {"epochs", s.epochs},
                      {"peak_lr", s.peak_lr},
                      {"warmup_ratio", s.warmup_ratio},
                      {"detection_pct", s.detection_pct},
                      {"cot_pct", s.cot_pct},
                      {"total_steps", loss::total_steps(s, spe)},
                      {"warmup_steps", loss::warmup_steps(s, spe)}});
  }

  out << "\nlearning rate (" << spe << " steps/epoch)\n";
  json samples = json::array();
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto total = loss::total_steps(schedule[k], spe);
    const auto warm = loss::warmup_steps(schedule[k], spe);
    const std::size_t steps[] = {0, warm, warm + (total - warm) / 4, warm + (total - warm) / 2,
                                 warm + 3 * (total - warm) / 4, total};
    out << "stage " << schedule[k].stage << ":";
    json row = json::array();
    for (const auto st : steps) {
      const double lr = loss::lr_at(schedule, k, st, spe);
      out << " " << st << "=" << fmt("%.4g", lr);
      row.push_back({{"step", st}, {"lr", lr}});
    }
    out << "\n";
    samples.push_back({{"stage", schedule[k].stage}, {"samples", row}});
  }

  json boundaries = json::array();
  for (std::size_t k = 0; k + 1 < schedule.size(); ++k) {
    const double end = loss::lr_at(schedule, k, loss::total_steps(schedule[k], spe), spe);
    const double start = loss::lr_at(schedule, k + 1, 0, spe);
    const double rel = std::abs(end - start) / std::max(std::abs(end), std::abs(start));
    out << "boundary " << schedule[k].stage << "->" << schedule[k + 1].stage << ": end " << fmt("%.6g", end)
        << " start " << fmt("%.6g", start) << " rel diff " << fmt("%.2e", rel) << "\n";
    boundaries.push_back({{"from", schedule[k].stage},
                          {"to", schedule[k + 1].stage},
                          {"end_lr", end},
                          {"start_lr", start},
                          {"rel_diff", rel}});
  }
  if (!out_path.empty()) {
    const json j = {{"steps_per_epoch", spe}, {"stages", stages}, {"lr_samples", samples}, {"boundaries", boundaries}};
    ds::write_text(out_path, j.dump(2) + "\n");
  }
  return kOk;
}

struct StatsPaths {
  std::string videos, subclips, annotations, grounded, instructions, failures, out;
};

int cmd_stats(const StatsPaths& p, std::ostream& out) {
  ds::StatsInput in;
  if (!p.videos.empty()) in.videos = ds::read_records(need(p.videos), &ds::video_from_json);
  if (!p.subclips.empty()) in.subclips = ds::read_records(need(p.subclips), &ds::subclip_from_json);
  if (!p.annotations.empty()) in.narrations = ds::read_records(need(p.annotations), &ds::narration_from_json);
  if (!p.grounded.empty()) in.grounded = ds::read_records(need(p.grounded), &ds::grounded_from_json);
  if (!p.instructions.empty()) in.instructions = ds::read_records(need(p.instructions), &ds::instruction_from_json);
  if (!p.failures.empty()) in.failures = ds::read_records(need(p.failures), &ds::failure_from_json);
  const auto stats = ds::compute_stats(in);
  out << ds::format_stats(stats);
  if (!p.out.empty()) ds::write_text(p.out, ds::to_json(stats).dump(2) + "\n");
  return kOk;
}

// Line protocol: optional header {video_id, label?}; samples
// {video_id?, frame_index, embedding}; {end: total_frames} closes the video.
// A sample for a new video_id closes the previous one at last frame + stride.
int cmd_stream(const Shared& sh, const std::string& input, std::istream& in, std::ostream& out) {
  const auto cfg = load_run_config(sh);
  std::ifstream file;
  std::istream* src = &in;
  if (input != "-") {
    file.open(need(input));
    src = &file;
  }
  std::optional<scene_gate::StreamingGate> gate;
  std::string current;
  std::int64_t last_frame = -1;
  std::size_t emitted = 0;
  auto emit = [&](const scene_gate::SubclipRecord& s) {
    out << ds::to_json(s).dump() << "\n";
    out.flush();
    ++emitted;
  };
  auto close = [&](std::optional<std::int64_t> total) {
    if (!gate) return;
    emit(gate->finish(total.value_or(last_frame < 0 ? 1 : last_frame + cfg.gate.stride)));
    gate.reset();
    last_frame = -1;
  };
  auto open = [&](const std::string& id, Label label) {
    close(std::nullopt);
    current = id;
    gate.emplace(id, cfg.gate, label);
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(*src, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.contains("end")) {
        if (!gate) throw ProtocolError("end without an open video");
        close(j.at("end").get<std::int64_t>());
        continue;
      }
      const auto id = j.contains("video_id") ? j.at("video_id").get<std::string>() : current;
      if (id.empty()) throw SchemaError("video_id missing");
      if (!j.contains("frame_index")) {
        open(id, label_field(j));
        continue;
      }
      if (!gate || id != current) open(id, label_field(j));
      const auto sample = sample_from_json(j);
      if (auto s = gate->push(sample)) emit(*s);
      last_frame = sample.frame_index;
    } catch (const json::exception& e) {
      throw SchemaError(e.what(), lineno);
    } catch (const SchemaError& e) {
      throw SchemaError(e.what(), lineno);
    }
  }
  close(std::nullopt);
  return kOk;
}

int cmd_validate(const std::string& schema, const std::string& path, std::ostream& out) {
  const auto s = ds::parse_schema(schema);
  if (!s) throw CLI::ValidationError("--schema", "unknown schema " + schema);
  const auto n = ds::validate_file(need(path), *s);
  out << n << " records valid\n";
  return kOk;
}

void report(std::ostream& err, const std::string& kind, const std::string& message, int code) {
  err << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Surveillance anomaly instruction-data pipeline and evaluation tools", "vanguard"};
  app.require_subcommand(1);
  app.fallthrough();

  Shared sh;
  app.add_option("--config", sh.config, "run configuration (JSON)");
  app.add_option("--seed", sh.seed, "override the configured seed");
  app.add_option("--archive", sh.archive, "write request/response transcripts here (JSONL)");
  app.add_option("--workers", sh.workers, "parallel requests per phase")->check(CLI::Range(1, 256));
  app.add_option("--fixtures", sh.fixtures, "directory of <video>.narration.txt replies for the mock narrator");

  std::function<int()> action;

  auto* mc = app.add_subcommand("mock-corpus", "write a synthetic video list and annotation sentences");
  std::size_t mc_n = 20;
  std::string mc_out;
  mc->add_option("--videos", mc_n, "number of videos")->check(CLI::Range(1, 100000));
  mc->add_option("--out", mc_out, "output directory")->required();
  mc->callback([&] { action = [&] { return cmd_mock_corpus(sh, mc_n, mc_out, out); }; });

  auto* seg = app.add_subcommand("segment", "split videos into scene subclips");
  std::string seg_videos, seg_streams, seg_out;
  bool seg_all = false;
  auto* sv = seg->add_option("--videos", seg_videos, "videos JSONL (frames embedded through the embed service)");
  auto* ss = seg->add_option("--streams", seg_streams, "precomputed embedding stream JSONL; all subclips kept");
  sv->excludes(ss);
  seg->add_flag("--all", seg_all, "skip per-video subsampling");
  seg->add_option("--out", seg_out, "subclips JSONL")->required();
  seg->callback([&] {
    if (seg_videos.empty() && seg_streams.empty()) throw CLI::RequiredError("--videos or --streams");
    action = [&] { return cmd_segment(sh, seg_videos, seg_streams, seg_all, seg_out, out); };
  });

  auto* nar = app.add_subcommand("narrate", "object narration per subclip");
  std::string nar_sub, nar_vid, nar_sent, nar_out;
  nar->add_option("--subclips", nar_sub)->required();
  nar->add_option("--videos", nar_vid)->required();
  nar->add_option("--sentences", nar_sent, "human annotation sentences JSONL");
  nar->add_option("--out", nar_out, "annotations JSONL")->required();
  nar->callback([&] { action = [&] { return cmd_narrate(sh, nar_sub, nar_vid, nar_sent, nar_out, out); }; });

  auto* gr = app.add_subcommand("ground", "detector grounding of narrated objects");
  std::string gr_sub, gr_vid, gr_ann, gr_out;
  gr->add_option("--subclips", gr_sub)->required();
  gr->add_option("--videos", gr_vid)->required();
  gr->add_option("--annotations", gr_ann)->required();
  gr->add_option("--out", gr_out, "grounded sets JSONL")->required();
  gr->callback([&] { action = [&] { return cmd_ground(sh, gr_sub, gr_vid, gr_ann, gr_out, out); }; });

  auto* sy = app.add_subcommand("synth", "chain-of-thought instruction synthesis");
  std::string sy_sub, sy_vid, sy_sent, sy_gr, sy_out, sy_fail;
  sy->add_option("--subclips", sy_sub)->required();
  sy->add_option("--videos", sy_vid)->required();
  sy->add_option("--sentences", sy_sent);
  sy->add_option("--grounded", sy_gr)->required();
  sy->add_option("--out", sy_out, "instruction items JSONL")->required();
  sy->add_option("--failures", sy_fail, "rejected generations JSONL");
  sy->callback([&] { action = [&] { return cmd_synth(sh, sy_sub, sy_vid, sy_sent, sy_gr, sy_out, sy_fail, out); }; });

  auto* as = app.add_subcommand("assemble", "per-stage training manifests");
  std::string as_vid, as_sub, as_gr, as_ins, as_out;
  as->add_option("--videos", as_vid)->required();
  as->add_option("--subclips", as_sub, "needed with --grounded");
  auto* as_g = as->add_option("--grounded", as_gr);
  as->add_option("--instructions", as_ins);
  as->add_option("--out", as_out, "output directory")->required();
  as->callback([&] {
    if (as_g->count() && as_sub.empty()) throw CLI::RequiredError("--subclips");
    action = [&] { return cmd_assemble(sh, as_vid, as_sub, as_gr, as_ins, as_out, out); };
  });

  auto* ec = app.add_subcommand("eval-cls", "AUC, PR-AUC, F1, accuracy and per-category rows");
  std::string ec_rec, ec_out;
  ec->add_option("--records", ec_rec, "eval records JSONL")->required();
  ec->add_option("--out", ec_out, "report JSON");
  ec->callback([&] { action = [&] { return cmd_eval_cls(ec_rec, ec_out, out); }; });

  auto* eg = app.add_subcommand("eval-grounding", "mean IoU and recall at an IoU threshold");
  std::string eg_rec, eg_out;
  bool eg_pen = true;
  double eg_thr = 0.25;
  eg->add_option("--records", eg_rec, "eval records JSONL")->required();
  eg->add_flag("--penalize-unmatched,!--no-penalize-unmatched", eg_pen,
               "unmatched ground-truth boxes count as IoU 0 (default on)");
  eg->add_option("--threshold", eg_thr, "IoU threshold for recall")->check(CLI::Range(0.0, 1.0));
  eg->add_option("--out", eg_out, "report JSON");
  eg->callback([&] { action = [&] { return cmd_eval_grounding(eg_rec, eg_pen, eg_thr, eg_out, out); }; });

  auto* lc = app.add_subcommand("loss-check", "finite-difference check of the GIoU gradient");
  std::size_t lc_n = 50;
  double lc_step = 1e-4, lc_tol = 1e-5;
  std::string lc_fix;
  lc->add_option("--configs", lc_n, "random configurations")->check(CLI::Range(1, 1000000));
  lc->add_option("--step", lc_step, "central difference step");
  lc->add_option("--tolerance", lc_tol, "maximum relative error");
  lc->add_option("--loss-fixtures", lc_fix, "JSONL of loss values to reproduce");
  lc->callback([&] { action = [&] { return cmd_loss_check(sh, lc_n, lc_step, lc_tol, lc_fix, out); }; });

  auto* pl = app.add_subcommand("plan", "print the training schedule");
  bool pl_joint = false;
  std::string pl_out;
  pl->add_flag("--joint", pl_joint, "single joint stage after the classifier warm-up");
  pl->add_option("--out", pl_out, "schedule JSON");
  pl->callback([&] { action = [&] { return cmd_plan(sh, pl_joint, pl_out, out); }; });

  auto* st = app.add_subcommand("stats", "dataset statistics per phase");
  StatsPaths sp;
  st->add_option("--videos", sp.videos);
  st->add_option("--subclips", sp.subclips);
  st->add_option("--annotations", sp.annotations);
  st->add_option("--grounded", sp.grounded);
  st->add_option("--instructions", sp.instructions);
  st->add_option("--failures", sp.failures);
  st->add_option("--out", sp.out, "stats JSON");
  st->callback([&] { action = [&] { return cmd_stats(sp, out); }; });

  auto* sm = app.add_subcommand("stream", "online scene gate over an embedding stream");
  std::string sm_in = "-";
  sm->add_option("--input", sm_in, "JSONL stream, '-' for stdin");
  sm->callback([&] { action = [&] { return cmd_stream(sh, sm_in, in, out); }; });

  auto* va = app.add_subcommand("validate", "schema-check a JSONL file");
  std::string va_schema, va_file;
  va->add_option("--schema", va_schema,
                 "videos|sentences|subclips|annotations|grounded|instructions|detections|manifest|eval")
      ->required();
  va->add_option("file", va_file)->required();
  va->callback([&] { action = [&] { return cmd_validate(va_schema, va_file, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    std::ostringstream sink;
    app.exit(e, sink, sink);
    report(err, "usage", e.what(), kUsage);
    return kUsage;
  }

  try {
    return action();
  } catch (const MissingInput& e) {
    report(err, "missing_input", e.what(), kMissingInput);
    return kMissingInput;
  } catch (const SchemaError& e) {
    report(err, "schema", e.what(), kSchema);
    return kSchema;
  } catch (const ParseError& e) {
    report(err, "schema", e.what(), kSchema);
    return kSchema;
  } catch (const json::exception& e) {
    report(err, "schema", e.what(), kSchema);
    return kSchema;
  } catch (const std::invalid_argument& e) {
    report(err, "invalid_config", e.what(), kSchema);
    return kSchema;
  } catch (const clients::TransportError& e) {
    report(err, "transport", e.what(), kService);
    return kService;
  } catch (const ProtocolError& e) {
    report(err, "protocol", e.what(), kService);
    return kService;
  } catch (const CheckFailed& e) {
    report(err, "check_failed", e.what(), kFailure);
    return kFailure;
  } catch (const CLI::ValidationError& e) {
    report(err, "usage", e.what(), kUsage);
    return kUsage;
  } catch (const std::exception& e) {
    report(err, "runtime", e.what(), kFailure);
    return kFailure;
  }
}

}  // namespace vanguard::cli
