#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>

#include "vanguard/clients.hpp"
#include "vanguard/prompts.hpp"

namespace vanguard::clients {

namespace {

struct Template {
  const char* label;
  const char* reason;
  bool abnormal;
};

struct Category {
  const char* name;
  std::vector<Template> actors;
};

const std::vector<Category>& categories() {
  static const std::vector<Category> k = {
      {"Abuse", {{"man", "striking a person on the ground", true}, {"woman", "lying on the ground after being hit", true}}},
      {"Arrest", {{"man", "physically restraining another man", true}, {"man", "being held down against his will", true}}},
      {"Arson", {{"man", "pouring liquid and igniting a fire", true}, {"fire", "spreading across the entrance", true}}},
      {"Assault", {{"man", "punching another person repeatedly", true}, {"person", "falling after being punched", true}}},
      {"Burglary", {{"man", "forcing open a window at night", true}, {"crowbar", "being used to pry the frame", true}}},
      {"Explosion", {{"smoke", "billowing from a sudden blast", true}, {"car", "thrown by the blast", true}}},
      {"Fighting", {{"man", "exchanging punches with another man", true}, {"boy", "kicking a man on the ground", true}}},
      {"RoadAccidents", {{"car", "colliding with a motorcycle at speed", true}, {"motorcycle", "knocked over in the collision", true}}},
      {"Robbery", {{"man", "pointing a gun at the cashier", true}, {"gun", "held toward the cashier", true}}},
      {"Shooting", {{"man", "firing a handgun at people", true}, {"handgun", "discharging in a crowded area", true}}},
      {"Shoplifting", {{"woman", "hiding merchandise inside her bag", true}, {"bag", "concealing unpaid items", true}}},
      {"Stealing", {{"man", "taking a bicycle that is not his", true}, {"bicycle", "being carried away", true}}},
      {"Vandalism", {{"man", "smashing a car window with a bat", true}, {"bat", "swung against the glass", true}}},
  };
  return k;
}

const std::vector<Template>& background() {
  static const std::vector<Template> k = {
      {"ladder", "leaning against the wall, stationary", false},
      {"chair", "standing empty near the counter", false},
      {"woman", "walking past at a normal pace", false},
      {"car", "parked at the curb", false},
      {"door", "closed and undisturbed", false},
      {"counter", "holding items for sale", false},
      {"table", "standing in the corner", false},
      {"trash can", "standing by the entrance", false},
      {"person", "standing calmly in line", false},
      {"bicycle", "locked to a rack", false},
  };
  return k;
}

std::string basename_of(const std::string& uri) {
  auto slash = uri.find_last_of("/\\");
  std::string base = slash == std::string::npos ? uri : uri.substr(slash + 1);
  auto dot = base.find('.');
  if (dot != std::string::npos) base.resize(dot);
  return base;
}

// Leading run of letters, e.g. "RoadAccidents" from "RoadAccidents012_x264".
std::string category_of(const std::string& base) {
  if (base.rfind("Normal", 0) == 0) return "Normal";
  std::size_t i = 0;
  while (i < base.size() && std::isalpha(static_cast<unsigned char>(base[i]))) ++i;
  return base.substr(0, i);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  return x;
}

// Box-Muller over uniform_unit, so the stream does not depend on the
// standard library's normal_distribution.
double gaussian(std::mt19937_64& rng) {
  double u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double in(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform_unit(rng); }

geometry::Box random_box(std::mt19937_64& rng, double min_side, double max_side) {
  const double w = in(rng, min_side, max_side);
  const double h = in(rng, min_side, max_side);
  const double x = in(rng, 0.0, 1.0 - w);
  const double y = in(rng, 0.0, 1.0 - h);
  return geometry::Box::make(x, y, x + w, y + h);
}

geometry::Box jitter(const geometry::Box& b, std::mt19937_64& rng, double amount) {
  const double w = b.width(), h = b.height();
  double x1 = std::clamp(b.x1 + in(rng, -amount, amount) * w, 0.0, 1.0);
  double y1 = std::clamp(b.y1 + in(rng, -amount, amount) * h, 0.0, 1.0);
  double x2 = std::clamp(b.x2 + in(rng, -amount, amount) * w, 0.0, 1.0);
  double y2 = std::clamp(b.y2 + in(rng, -amount, amount) * h, 0.0, 1.0);
  if (x2 <= x1) x2 = std::min(1.0, x1 + 0.01);
  if (y2 <= y1) y2 = std::min(1.0, y1 + 0.01);
  if (x2 <= x1) x1 = x2 - 0.01;
  if (y2 <= y1) y1 = y2 - 0.01;
  return geometry::Box::make(x1, y1, x2, y2);
}

std::string with_article(const std::string& label) {
  const char c = label.empty() ? 'x' : label[0];
  return (std::string("aeiou").find(c) != std::string::npos ? "an " : "a ") + label;
}

json box_json(const geometry::Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

}  // namespace

MockWorld::Video MockWorld::video(const std::string& uri) const {
  const std::string base = basename_of(uri);
  const std::string cat = category_of(base);
  std::mt19937_64 rng(fnv1a(base, seed_));

  Video v;
  v.uri = uri;
  v.total_frames = 600 + static_cast<std::int64_t>(uniform_index(rng, 1801));

  v.scene_cuts.push_back(0);
  const std::size_t n_cuts = 1 + uniform_index(rng, 3);
  for (std::size_t k = 0; k < n_cuts; ++k) {
    const auto lo = v.scene_cuts.back() + 150;
    const auto room = v.total_frames - 150 - lo;
    if (room <= 0) break;
    v.scene_cuts.push_back(lo + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(room))));
  }

  const Category* found = nullptr;
  for (const auto& c : categories()) {
    if (cat == c.name) found = &c;
  }
  v.label = found ? Label::Abnormal : Label::Normal;
  if (found) {
    const auto len = v.total_frames / 4 + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(v.total_frames / 4)));
    const auto start = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::size_t>(v.total_frames - len)));
    v.anomalous.push_back({start, start + len - 1});
    for (const auto& t : found->actors) {
      v.objects.push_back({t.label, true, t.reason, std::round(in(rng, 0.8, 0.97) * 100) / 100,
                           random_box(rng, 0.12, 0.4), false, true});
    }
  }

  const auto& bg = background();
  const std::size_t n_bg = 1 + uniform_index(rng, 3);
  std::vector<std::size_t> picks;
  while (picks.size() < n_bg) {
    const auto k = uniform_index(rng, bg.size());
    if (std::find(picks.begin(), picks.end(), k) == picks.end()) picks.push_back(k);
  }
  for (auto k : picks) {
    v.objects.push_back({bg[k].label, false, bg[k].reason, std::round(in(rng, 0.6, 0.95) * 100) / 100,
                         random_box(rng, 0.08, 0.35), false, true});
  }
  if (uniform_unit(rng) < 0.7) {
    v.objects.push_back({"floor", false, "visible beneath the people, undisturbed", 0.9,
                         geometry::Box::make(0.0, 0.35, 1.0, 1.0), true, true});
  }
  if (uniform_unit(rng) < 0.5) {
    v.objects.push_back({"wall", false, "forming the background of the room", 0.85,
                         geometry::Box::make(0.0, 0.0, 1.0, 0.7), true, true});
  }
  if (uniform_unit(rng) < 0.3) {
    v.objects.push_back({"lighting", false, "dim overhead lighting", 0.6,
                         geometry::Box::make(0.3, 0.0, 0.7, 0.1), false, false});
  }
  return v;
}

std::optional<geometry::Box> MockWorld::box_at(const Video& v, std::size_t i, std::int64_t frame) const {
  const auto& o = v.objects.at(i);
  if (!o.detectable) return std::nullopt;
  if (o.scene_level) return o.box;
  std::mt19937_64 rng(mix(fnv1a(v.uri, seed_), mix(i, static_cast<std::uint64_t>(frame))));
  if (uniform_unit(rng) < 0.25) return std::nullopt;
  const double dx = 0.05 * std::sin(static_cast<double>(frame) / 200.0 + static_cast<double>(i));
  const double shift = std::clamp(dx, -o.box.x1, 1.0 - o.box.x2);
  return geometry::Box::make(o.box.x1 + shift, o.box.y1, o.box.x2 + shift, o.box.y2);
}

namespace {

class WorldService : public MockTransport {
 public:
  WorldService(std::shared_ptr<const MockWorld> world, MockOptions options)
      : world_(std::move(world)), options_(std::move(options)) {
    set_latency_ms(options_.latency_ms);
  }

 protected:
  // Videos are deterministic, so caching only saves work.
  MockWorld::Video video(const std::string& uri) {
    std::lock_guard lock(mu_);
    auto it = cache_.find(uri);
    if (it == cache_.end()) it = cache_.emplace(uri, world_->video(uri)).first;
    return it->second;
  }

  // How many times this exact request has been seen before.
  int attempt(const json& body) {
    std::lock_guard lock(mu_);
    return seen_[body.dump()]++;
  }

  std::shared_ptr<const MockWorld> world_;
  MockOptions options_;

 private:
  std::mutex mu_;
  std::map<std::string, MockWorld::Video> cache_;
  std::map<std::string, int> seen_;
};

class MockEmbedder : public WorldService {
 public:
  using WorldService::WorldService;

 protected:
  json respond(const std::string& path, const json& body) override {
    if (path != "/embed") throw ServiceError(404, "unknown path " + path);
    const auto media = MediaRef::from_json(body.at("image"));
    const auto v = video(media.uri);
    const std::int64_t frame = media.frame_index.value_or(0);
    if (frame < 0 || frame >= v.total_frames) throw ServiceError(400, "frame out of range");
    const auto scene = static_cast<std::uint64_t>(
        std::upper_bound(v.scene_cuts.begin(), v.scene_cuts.end(), frame) - v.scene_cuts.begin());

    const std::size_t dim = options_.embed_dim;
    std::mt19937_64 center_rng(mix(fnv1a(v.uri, world_->seed()), scene));
    std::vector<double> e(dim);
    double norm = 0.0;
    for (auto& x : e) {
      x = gaussian(center_rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    std::mt19937_64 noise_rng(mix(fnv1a(v.uri, world_->seed() + 1), static_cast<std::uint64_t>(frame)));
    const double sigma = 0.1 / std::sqrt(static_cast<double>(dim));
    json out = json::array();
    for (auto& x : e) out.push_back(3.0 * (x / norm + sigma * gaussian(noise_rng)));
    return {{"embedding", out}};
  }
};

class MockDetector : public WorldService {
 public:
  using WorldService::WorldService;

 protected:
  json respond(const std::string& path, const json& body) override {
    if (path != "/detect") throw ServiceError(404, "unknown path " + path);
    const auto media = MediaRef::from_json(body.at("image"));
    const auto v = video(media.uri);
    const std::int64_t frame = media.frame_index.value_or(v.total_frames - 1);
    const auto queries = body.at("queries").get<std::vector<std::string>>();
    const double threshold = body.value("box_threshold", 0.25);

    std::mt19937_64 rng(mix(fnv1a(body.dump(), world_->seed()), 17));
    json dets = json::array();
    auto emit = [&](const std::string& label, const geometry::Box& b, double conf, std::size_t q) {
      dets.push_back({{"label", label}, {"box", box_json(b)}, {"confidence", conf}, {"query_index", q}});
    };

    for (std::size_t q = 0; q < queries.size(); ++q) {
      const std::string query = to_lower(trim(queries[q]));
      for (std::size_t i = 0; i < v.objects.size(); ++i) {
        const auto& o = v.objects[i];
        const bool by_label = q == 0 && query == o.label;
        const bool by_reason = q > 0 && query == to_lower(o.reason);
        if (!by_label && !by_reason) continue;
        const auto box = world_->box_at(v, i, frame);
        if (!box) continue;
        const double conf = std::round(in(rng, std::max(threshold, 0.35), 0.92) * 1000) / 1000;
        if (by_label) {
          emit(o.label, *box, conf, q);
          if (uniform_unit(rng) < 0.3) emit(o.label, jitter(*box, rng, 0.05), conf * 0.8, q);
        } else {
          // Phrase grounding returns the phrase itself as the label.
          emit(query, jitter(*box, rng, 0.08), conf * 0.9, q);
        }
      }
      if (q == 0 && uniform_unit(rng) < 0.2) {
        emit("person", random_box(rng, 0.1, 0.3), std::max(threshold, 0.3), q);
      }
    }
    if (uniform_unit(rng) < 0.1) emit("shadow", random_box(rng, 0.1, 0.3), 1.2, 0);
    if (uniform_unit(rng) < 0.1) emit("reflection", random_box(rng, 0.1, 0.3), threshold / 2, 0);
    return {{"detections", dets}};
  }
};

class MockVlm : public WorldService {
 public:
  using WorldService::WorldService;

 protected:
  json respond(const std::string& path, const json& body) override {
    if (path != "/generate") throw ServiceError(404, "unknown path " + path);
    const auto media = MediaRef::from_json(body.at("media"));
    const std::string prompt = body.at("prompt").get<std::string>();
    const int n = attempt(body);
    if (prompt.find("Task 2: Object Detection") != std::string::npos) {
      return {{"text", narrate(media, n)}};
    }
    if (prompt.find("The video is labeled: ") != std::string::npos) {
      return {{"text", reason(prompt, n)}};
    }
    const auto v = video(media.uri);
    return {{"text", v.label == Label::Abnormal ? "Yes, this looks abnormal." : "No, the scene is normal."}};
  }

 private:
  std::string narrate(const MediaRef& media, int attempt_no) {
    const std::string base = basename_of(media.uri);
    if (auto it = options_.narration_fixtures.find(base); it != options_.narration_fixtures.end()) {
      return it->second;
    }
    const auto v = video(media.uri);
    const std::int64_t s = media.start_frame.value_or(0);
    const std::int64_t e = media.end_frame.value_or(v.total_frames - 1);
    bool anomalous = false;
    for (const auto& [a, b] : v.anomalous) anomalous = anomalous || (a <= e && s <= b);

    std::mt19937_64 rng(mix(fnv1a(media.to_json().dump(), world_->seed()), static_cast<std::uint64_t>(attempt_no)));
    const double roll = uniform_unit(rng);
    if (roll < 0.04) return "I am unable to list the objects in this clip.";

    json arr = json::array();
    for (const auto& o : v.objects) {
      if (o.abnormal && !anomalous) continue;
      arr.push_back({{"Event", o.abnormal ? "Abnormal" : "Normal"},
                     {"Reason", o.reason},
                     {"label", o.label},
                     {"confidence", o.confidence}});
    }
    if (uniform_unit(rng) < 0.1) arr.push_back({{"Event", "Normal"}, {"Reason", "glare"}, {"label", "light"}, {"confidence", 1.3}});
    const std::string text = arr.dump(2);
    if (roll < 0.25) return "```json\n" + text + "\n```";
    if (roll < 0.35) return "Here are the detected objects:\n" + text;
    return text;
  }

  struct Bullet {
    std::string label;
    std::optional<std::string> box;
    std::string reason;
    bool abnormal = false;
  };

  static std::vector<Bullet> bullets(const std::string& prompt) {
    std::vector<Bullet> out;
    std::istringstream in(prompt);
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("- ", 0) != 0 || line.find("\" (") == std::string::npos) continue;
      Bullet b;
      const auto colon = line.find(": \"");
      if (colon == std::string::npos) continue;
      std::string head = line.substr(2, colon - 2);
      if (auto at = head.find(" at ["); at != std::string::npos) {
        b.box = head.substr(at + 4);
        head.resize(at);
      }
      b.label = head;
      const auto close = line.rfind("\" (");
      b.reason = line.substr(colon + 3, close - colon - 3);
      b.abnormal = line.find("(Abnormal)", close) != std::string::npos;
      out.push_back(std::move(b));
    }
    return out;
  }

  std::string reason(const std::string& prompt, int attempt_no) {
    const auto pos = prompt.find("The video is labeled: ") + 22;
    const std::string label = prompt.substr(pos, prompt.find('\n', pos) - pos);
    const auto objs = bullets(prompt);
    std::mt19937_64 rng(mix(fnv1a(prompt, world_->seed()), static_cast<std::uint64_t>(attempt_no)));

    std::string obs = "Observations: ";
    std::size_t used = 0;
    for (const auto& b : objs) {
      if (used == 3) break;
      obs += used == 0 ? "In the video, I observe " : " I also see ";
      obs += with_article(b.label);
      if (b.box) obs += " at " + *b.box;
      obs += " " + b.reason + ".";
      ++used;
    }
    if (used == 0) obs += "In the video, I observe a quiet scene with no notable activity.";

    std::string analysis = "Analysis: ";
    const auto abnormal = std::count_if(objs.begin(), objs.end(), [](const Bullet& b) { return b.abnormal; });
    if (label == "Abnormal") {
      analysis += abnormal > 0 ? "The behavior of the " + std::find_if(objs.begin(), objs.end(), [](const Bullet& b) { return b.abnormal; })->label +
                                     " is harmful and deviates from routine activity in this scene."
                               : "The overall activity deviates from routine behavior in this scene.";
    } else {
      analysis += "Every object behaves in a routine way and nothing suggests danger.";
    }

    std::string text;
    if (uniform_unit(rng) < 0.3) text = std::string(prompts::kCotPrefix) + "\n\n";
    text += obs + "\n\n" + analysis;
    if (uniform_unit(rng) >= options_.cot_drop_answer_rate) text += "\n\nAnswer: " + label;
    return text;
  }
};

}  // namespace

void load_narration_fixtures(const std::filesystem::path& dir, MockOptions& options) {
  constexpr std::string_view kSuffix = ".narration.txt";
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > kSuffix.size() && name.ends_with(kSuffix)) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string name = p.filename().string();
    options.narration_fixtures[name.substr(0, name.size() - kSuffix.size())] = ss.str();
  }
}

MockSuite mock_suite(const MockOptions& options) {
  auto world = std::make_shared<const MockWorld>(options.seed);
  return {std::make_shared<MockVlm>(world, options), std::make_shared<MockDetector>(world, options),
          std::make_shared<MockEmbedder>(world, options)};
}

}  // namespace vanguard::clients
