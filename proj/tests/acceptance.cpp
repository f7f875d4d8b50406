// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "support.hpp"
#include "vanguard/cli.hpp"
#include "vanguard/cot.hpp"
#include "vanguard/datastore.hpp"
#include "vanguard/geometry.hpp"
#include "vanguard/grounding.hpp"
#include "vanguard/loss.hpp"
#include "vanguard/metrics.hpp"
#include "vanguard/scene_gate.hpp"

namespace fs = std::filesystem;
using namespace vanguard;
using nlohmann::json;

namespace {

// Tolerances, fixed here.
constexpr double kF1Tol = 0.001;
constexpr double kRateTol = 0.0005;
constexpr double kGradStep = 1e-4;
constexpr double kGradTol = 1e-5;
constexpr std::size_t kGradConfigs = 60;
constexpr std::size_t kOracleInstances = 300;
constexpr std::size_t kStreams = 1200;
constexpr double kLrRelTol = 1e-12;
constexpr int kMockVideos = 70;

int failures = 0;

void verdict(int n, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int cli_run(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::istringstream in;
  std::ostringstream o, e;
  const int code = cli::run(args, in, o, e);
  if (out) *out = o.str();
  if (code != 0) std::fprintf(stderr, "cli %s failed (%d): %s\n", args[0].c_str(), code, e.str().c_str());
  return code;
}

// -- 1 ----------------------------------------------------------------------

void criterion1() {
  const double f1a = metrics::f1_score(0.8108, 0.8627), f1b = metrics::f1_score(0.9084, 0.8500);

  // The published rows only give precision and recall, so the counting path
  // is checked separately on a small table with known rationals.
  std::vector<int> pred, label;
  auto push = [&](int p, int y, int n) {
    for (int i = 0; i < n; ++i) {
      pred.push_back(p);
      label.push_back(y);
    }
  };
  push(1, 1, 30);
  push(1, 0, 7);
  push(0, 1, 5);
  push(0, 0, 58);
  const auto prf = metrics::prf_accuracy(pred, label);
  const bool table_ok = prf.tp == 30 && prf.fp == 7 && prf.fn == 5 && prf.tn == 58 &&
                        prf.precision == 30.0 / 37.0 && prf.recall == 30.0 / 35.0 &&
                        std::abs(prf.f1 - metrics::f1_score(30.0 / 37.0, 30.0 / 35.0)) < 1e-15;

  std::vector<metrics::EvalRecord> rs;
  auto rec = [&](const std::string& cat, Label l, bool abnormal) {
    metrics::EvalRecord r;
    r.sample_id = cat + std::to_string(rs.size());
    r.category = cat;
    r.label = l;
    r.verdict = abnormal ? "Abnormal" : "Normal";
    rs.push_back(r);
  };
  for (int i = 0; i < 21; ++i) rec("Shoplifting", Label::Abnormal, i < 14);
  for (int i = 0; i < 150; ++i) rec("Normal", Label::Normal, i >= 109);
  const auto rows = metrics::per_category_report(rs);
  const metrics::CategoryRow* shop = nullptr;
  const metrics::CategoryRow* normal = nullptr;
  for (const auto& r : rows) {
    if (r.category == "Shoplifting") shop = &r;
    if (r.category == "Normal") normal = &r;
  }
  const bool cat_ok = shop && normal && shop->tp == 14 && shop->total == 21 && shop->recall == 14.0 / 21.0 &&
                      normal->tn == 109 && normal->total == 150 && normal->accuracy == 109.0 / 150.0 &&
                      std::abs(shop->recall - 0.667) <= 0.0005 && std::abs(normal->accuracy - 0.727) <= 0.0005;

  const bool ok = std::abs(f1a - 0.836) <= kF1Tol && std::abs(f1b - 0.8782) <= kF1Tol && table_ok && cat_ok;
  verdict(1, ok,
          "F1 " + fmt("%.4f", f1a) + " (want 0.836), " + fmt("%.4f", f1b) + " (want 0.8782), Shoplifting recall " +
              (shop ? std::to_string(shop->tp) + "/" + std::to_string(shop->total) : "?") + ", Normal accuracy " +
              (normal ? std::to_string(normal->tn) + "/" + std::to_string(normal->total) : "?"));
}

// -- 2 ----------------------------------------------------------------------

void criterion2() {
  const grounding::GroundingRate r{147067, 159008};
  verdict(2, std::abs(r.rate() - 0.925) <= kRateTol, "147067/159008 = " + fmt("%.5f", r.rate()));
}

// -- 3 ----------------------------------------------------------------------

void criterion3() {
  const auto c = loss::check_giou_gradient(kGradConfigs, 42, kGradStep);
  verdict(3, c.configs >= 50 && c.max_rel_error <= kGradTol,
          std::to_string(c.configs) + " configs, " + std::to_string(c.parameters) + " parameters, max rel error " +
              fmt("%.3e", c.max_rel_error));
}

// -- 4 ----------------------------------------------------------------------

void criterion4() {
  std::mt19937_64 rng(4);
  std::size_t roc_bad = 0, hun_bad = 0, greedy_bad = 0;
  for (std::size_t t = 0; t < kOracleInstances; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 40);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, 12)) / 4.0;
      y[i] = static_cast<int>(uniform_index(rng, 2));
    }
    y[0] = 0;
    y[1] = 1;
    const auto c = metrics::mann_whitney(s, y);
    const std::int64_t pos = std::count(y.begin(), y.end(), 1);
    if (c.twice_u != vt::pairwise_twice_u(s, y) || c.pairs != pos * (static_cast<std::int64_t>(n) - pos)) ++roc_bad;
  }
  for (std::size_t t = 0; t < kOracleInstances; ++t) {
    const std::size_t r = 1 + uniform_index(rng, 6), c = 1 + uniform_index(rng, 6);
    std::vector<std::vector<double>> cost(r, std::vector<double>(c));
    for (auto& row : cost) {
      for (auto& x : row) x = static_cast<double>(uniform_index(rng, 20));  // integers: exact sums
    }
    const auto h = geometry::hungarian(cost);
    double total = 0.0;
    std::set<std::size_t> rows, cols;
    for (auto [i, j] : h.pairs) {
      total += cost[i][j];
      rows.insert(i);
      cols.insert(j);
    }
    if (h.pairs.size() != std::min(r, c) || rows.size() != h.pairs.size() || cols.size() != h.pairs.size() ||
        total != h.total_cost || h.total_cost != vt::brute_min_cost(cost)) {
      ++hun_bad;
    }
  }
  for (std::size_t t = 0; t < kOracleInstances; ++t) {
    std::vector<geometry::Box> p, g;
    for (std::size_t i = 0, k = uniform_index(rng, 6); i < k; ++i) p.push_back(vt::random_box(rng, 0.05));
    for (std::size_t i = 0, k = uniform_index(rng, 6); i < k; ++i) g.push_back(vt::random_box(rng, 0.05));
    auto got = geometry::greedy_best_match(p, g).assignment.pairs;
    std::sort(got.begin(), got.end());
    if (got != vt::brute_best_match(p, g)) ++greedy_bad;
  }
  verdict(4, roc_bad == 0 && hun_bad == 0 && greedy_bad == 0,
          std::to_string(kOracleInstances) + " instances each; mismatches roc " + std::to_string(roc_bad) +
              ", hungarian " + std::to_string(hun_bad) + ", greedy " + std::to_string(greedy_bad));
}

// -- 5, 7, 9: mock pipeline -----------------------------------------------

bool run_pipeline(const fs::path& dir) {
  const auto p = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::string> seed = {"--seed", "42"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), seed.begin(), seed.end());
    return a;
  };
  return cli_run(with({"mock-corpus", "--videos", std::to_string(kMockVideos), "--out", dir.string()})) == 0 &&
         cli_run(with({"segment", "--videos", p("videos.jsonl"), "--out", p("subclips.jsonl"), "--archive",
                       p("segment.archive.jsonl")})) == 0 &&
         cli_run(with({"narrate", "--subclips", p("subclips.jsonl"), "--videos", p("videos.jsonl"), "--sentences",
                       p("sentences.jsonl"), "--out", p("annotations.jsonl"), "--archive",
                       p("narrate.archive.jsonl")})) == 0 &&
         cli_run(with({"ground", "--subclips", p("subclips.jsonl"), "--videos", p("videos.jsonl"), "--annotations",
                       p("annotations.jsonl"), "--out", p("grounded.jsonl"), "--archive",
                       p("ground.archive.jsonl")})) == 0 &&
         cli_run(with({"synth", "--subclips", p("subclips.jsonl"), "--videos", p("videos.jsonl"), "--sentences",
                       p("sentences.jsonl"), "--grounded", p("grounded.jsonl"), "--out", p("instructions.jsonl"),
                       "--failures", p("failures.jsonl"), "--archive", p("synth.archive.jsonl")})) == 0 &&
         cli_run(with({"assemble", "--videos", p("videos.jsonl"), "--subclips", p("subclips.jsonl"), "--grounded",
                       p("grounded.jsonl"), "--instructions", p("instructions.jsonl"), "--out",
                       (dir / "manifests").string()})) == 0 &&
         cli_run(with({"stats", "--videos", p("videos.jsonl"), "--subclips", p("subclips.jsonl"), "--annotations",
                       p("annotations.jsonl"), "--grounded", p("grounded.jsonl"), "--instructions",
                       p("instructions.jsonl"), "--failures", p("failures.jsonl"), "--out", p("stats.json")})) == 0;
}

void criterion5(const fs::path& dir, bool ran) {
  if (!ran) {
    verdict(5, false, "pipeline run failed");
    return;
  }
  const auto subclips = datastore::read_records(dir / "subclips.jsonl", &datastore::subclip_from_json);
  const auto sets = datastore::read_records(dir / "grounded.jsonl", &datastore::grounded_from_json);
  std::size_t boxes = 0, area = 0, overlap = 0, anchor = 0, label = 0;
  for (const auto& g : sets) {
    for (std::size_t i = 0; i < g.objects.size(); ++i) {
      const auto& o = g.objects[i];
      if (!o.box) continue;
      ++boxes;
      if (geometry::area_fraction(*o.box) > 0.5) ++area;
      if (!o.anchor_frame || *o.anchor_frame != g.anchor_frame) ++anchor;
      if (!o.det_label || !geometry::label_match(*o.det_label, o.annotation.label)) ++label;
      for (std::size_t j = i + 1; j < g.objects.size(); ++j) {
        if (g.objects[j].box && geometry::iou(*o.box, *g.objects[j].box) > 0.5) ++overlap;
      }
    }
  }
  const std::size_t violations = area + overlap + anchor + label;
  verdict(5, subclips.size() >= 100 && sets.size() == subclips.size() && boxes > 0 && violations == 0,
          std::to_string(subclips.size()) + " subclips, " + std::to_string(boxes) + " grounded boxes; violations area " +
              std::to_string(area) + ", overlap " + std::to_string(overlap) + ", anchor " + std::to_string(anchor) +
              ", label " + std::to_string(label));
}

void criterion7(const fs::path& dir, bool ran) {
  std::size_t items = 0, boxes_want = 0, boxes_got = 0, answers = 0;
  if (ran) {
    const auto sets = datastore::read_records(dir / "grounded.jsonl", &datastore::grounded_from_json);
    std::map<std::string, const grounding::GroundedSet*> by_id;
    for (const auto& g : sets) by_id[g.subclip_id] = &g;
    for (const auto& item : datastore::read_records(dir / "instructions.jsonl", &datastore::instruction_from_json)) {
      ++items;
      const auto it = by_id.find(item.subclip_id);
      if (it == by_id.end()) continue;
      std::vector<cot::LabeledBox> want;
      for (const auto& o : cot::canonical_order(it->second->objects)) {
        if (o.box) want.push_back({o.annotation.label, geometry::to_bins(*o.box)});
      }
      boxes_want += want.size();
      try {
        const auto p = cot::parse_cot(item.assistant_response);
        if (p.answer == item.label) ++answers;
        for (std::size_t k = 0; k < want.size() && k < p.boxes.size(); ++k) {
          if (p.boxes[k] == want[k]) ++boxes_got;
        }
      } catch (const ParseError&) {
      }
    }
  }

  bool appendix_ok = false;
  std::string appendix;
  try {
    const auto p = cot::parse_cot(vt::slurp(vt::fixture_dir() / "appendix_cot.txt"));
    appendix_ok = p.answer == Label::Abnormal && p.boxes.size() == 2 &&
                  p.boxes[0].box == geometry::BinBox::make(456, 559, 634, 849) &&
                  p.boxes[1].box == geometry::BinBox::make(661, 131, 804, 455);
    appendix = std::string(to_string(p.answer)) + " with " + std::to_string(p.boxes.size()) + " boxes";
  } catch (const std::exception& e) {
    appendix = e.what();
  }
  verdict(7, ran && items > 0 && boxes_got == boxes_want && answers == items && appendix_ok,
          std::to_string(items) + " items: boxes " + std::to_string(boxes_got) + "/" + std::to_string(boxes_want) +
              ", answers " + std::to_string(answers) + "/" + std::to_string(items) + "; appendix response: " + appendix);
}

void criterion9(const fs::path& a, const fs::path& b, bool ran_a, bool ran_b) {
  std::size_t files = 0, differing = 0;
  std::set<std::string> names;
  for (const auto* root : {&a, &b}) {
    for (const auto& e : fs::recursive_directory_iterator(*root)) {
      if (e.is_regular_file()) names.insert(fs::relative(e.path(), *root).string());
    }
  }
  for (const auto& n : names) {
    ++files;
    if (!fs::exists(a / n) || !fs::exists(b / n) || vt::slurp(a / n) != vt::slurp(b / n)) {
      ++differing;
      std::fprintf(stderr, "differs: %s\n", n.c_str());
    }
  }
  verdict(9, ran_a && ran_b && files > 0 && differing == 0,
          std::to_string(files) + " artifact files compared, " + std::to_string(differing) + " differ");
}

// -- 6 ----------------------------------------------------------------------

void criterion6() {
  std::mt19937_64 rng(6);
  std::size_t mismatches = 0, monotone_violations = 0, comparisons = 0;
  const std::vector<double> taus = {0.3, 0.5, 0.7, 0.8, 0.85, 0.9, 0.92, 0.95, 0.99};
  for (std::size_t t = 0; t < kStreams; ++t) {
    const scene_gate::GateConfig cfg{1 + static_cast<std::int64_t>(uniform_index(rng, 30)), 0.92};
    const auto s = vt::random_stream(rng, cfg.stride);

    const auto batch = scene_gate::segment("v", s.samples, s.total_frames, cfg);
    scene_gate::StreamingGate gate("v", cfg);
    std::vector<scene_gate::SubclipRecord> online;
    for (const auto& x : s.samples) {
      if (auto r = gate.push(x)) online.push_back(*r);
    }
    online.push_back(gate.finish(s.total_frames));
    if (online != batch) ++mismatches;

    std::size_t prev = 0;
    for (std::size_t k = 0; k < taus.size(); ++k) {
      const auto n = scene_gate::segment("v", s.samples, s.total_frames, {cfg.stride, taus[k]}).size();
      if (k > 0) {
        ++comparisons;
        if (n < prev) ++monotone_violations;  // a lower tau produced more subclips
      }
      prev = n;
    }
  }
  verdict(6, mismatches == 0 && monotone_violations == 0,
          std::to_string(kStreams) + " streams: streaming/batch mismatches " + std::to_string(mismatches) +
              "; tau-monotonicity violations " + std::to_string(monotone_violations) + " of " +
              std::to_string(comparisons) + " adjacent tau pairs");
}

// -- 8 ----------------------------------------------------------------------

void criterion8(const fs::path& dir) {
  std::string text;
  const bool ran = cli_run({"plan", "--out", (dir / "plan.json").string()}, &text) == 0;
  bool lambda_ok = false, boundary_ok = false;
  std::string detail;
  if (ran) {
    std::istringstream lines(text);
    std::vector<std::array<double, 3>> lambdas;
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line) && !line.empty()) {
      std::istringstream row(line);
      int stage;
      std::string name;
      std::array<double, 3> l{};
      row >> stage >> name >> l[0] >> l[1] >> l[2];
      lambdas.push_back(l);
    }
    const std::vector<std::array<double, 3>> want = {{1, 0, 0}, {1, 0.5, 1}, {1, 0.5, 0}};
    lambda_ok = lambdas == want;

    const auto stages = loss::curriculum_stages();
    const double end1 = loss::lr_at(stages, 0, loss::total_steps(stages[0], 262), 262);
    const double start2 = loss::lr_at(stages, 1, 0, 262);
    const double rel = std::abs(end1 - start2) / end1;
    const auto plan = json::parse(vt::slurp(dir / "plan.json"));
    double worst = 0.0;
    for (const auto& b : plan["boundaries"]) worst = std::max(worst, b["rel_diff"].get<double>());
    boundary_ok = rel <= kLrRelTol && worst <= kLrRelTol && std::abs(end1 - 1e-5) / 1e-5 <= kLrRelTol;
    detail = "stage-1 end " + fmt("%.6g", end1) + ", stage-2 start " + fmt("%.6g", start2) + ", rel " +
             fmt("%.2e", rel) + "; lambda rows " + std::to_string(lambdas.size()) + (lambda_ok ? " match" : " differ");
  }
  verdict(8, ran && lambda_ok && boundary_ok, ran ? detail : "plan failed");
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();

  const auto a = vt::scratch_dir("acceptance_a"), b = vt::scratch_dir("acceptance_b");
  const bool ran_a = run_pipeline(a);
  criterion5(a, ran_a);
  criterion6();
  criterion7(a, ran_a);
  criterion8(vt::scratch_dir("acceptance_plan"));
  const bool ran_b = run_pipeline(b);
  criterion9(a, b, ran_a, ran_b);

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
