#include "vanguard/clients.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace vanguard::clients {

void ServiceEndpoint::validate() const {
  if (!(timeout_s > 0.0)) throw std::invalid_argument("endpoint timeout must be > 0");
  if (max_retries < 0) throw std::invalid_argument("endpoint max_retries must be >= 0");
  if (max_in_flight < 1) throw std::invalid_argument("endpoint max_in_flight must be >= 1");
  if (backoff_initial_s < 0.0) throw std::invalid_argument("endpoint backoff must be >= 0");
}

void Archive::record(const std::string& service, const json& request, const json& outcome,
                     int retry_count) {
  json rec = {{"service", service}, {"request", request}, {"retry_count", retry_count}};
  if (outcome.contains("error")) {
    rec["error"] = outcome["error"];
  } else {
    rec["response"] = outcome;
  }
  std::lock_guard lock(mu_);
  records_.push_back(std::move(rec));
}

std::vector<json> Archive::records() const {
  std::vector<json> out;
  {
    std::lock_guard lock(mu_);
    out = records_;
  }
  // Calls sharing a key are issued sequentially by one task, so a stable sort
  // keeps their relative order.
  std::stable_sort(out.begin(), out.end(), [](const json& a, const json& b) {
    if (a["service"] != b["service"]) return a["service"] < b["service"];
    return a["request"].dump() < b["request"].dump();
  });
  return out;
}

void Archive::write(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    for (const auto& r : records()) out << r.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
}

json MediaRef::to_json() const {
  json j = {{"uri", uri}};
  if (frame_index) j["frame_index"] = *frame_index;
  if (start_frame) j["start_frame"] = *start_frame;
  if (end_frame) j["end_frame"] = *end_frame;
  return j;
}

MediaRef MediaRef::from_json(const json& j) {
  MediaRef m;
  m.uri = j.at("uri").get<std::string>();
  if (j.contains("frame_index")) m.frame_index = j["frame_index"].get<std::int64_t>();
  if (j.contains("start_frame")) m.start_frame = j["start_frame"].get<std::int64_t>();
  if (j.contains("end_frame")) m.end_frame = j["end_frame"].get<std::int64_t>();
  return m;
}

ServiceClient::ServiceClient(std::string service, ServiceEndpoint endpoint,
                             std::shared_ptr<Transport> transport, std::shared_ptr<Archive> archive)
    : service_(std::move(service)),
      endpoint_(std::move(endpoint)),
      transport_(std::move(transport)),
      archive_(std::move(archive)) {
  endpoint_.validate();
  if (!transport_) throw std::invalid_argument("client needs a transport");
}

std::pair<json, CallInfo> ServiceClient::call(const std::string& path, const json& body) {
  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < endpoint_.max_in_flight; });
    ++in_flight_;
    int peak = peak_in_flight_.load();
    while (in_flight_ > peak && !peak_in_flight_.compare_exchange_weak(peak, in_flight_)) {
    }
  }
  struct Release {
    ServiceClient* self;
    ~Release() {
      {
        std::lock_guard lock(self->mu_);
        --self->in_flight_;
      }
      self->cv_.notify_one();
    }
  } release{this};

  const json request = {{"path", path}, {"body", body}};
  const auto t0 = std::chrono::steady_clock::now();
  CallInfo info;
  double backoff = endpoint_.backoff_initial_s;
  for (;;) {
    try {
      json response = transport_->post(path, body, endpoint_.timeout_s, endpoint_.auth_token);
      info.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (archive_) archive_->record(service_, request, response, info.retry_count);
      return {std::move(response), info};
    } catch (const TransportError& e) {
      if (info.retry_count >= endpoint_.max_retries) {
        if (archive_) archive_->record(service_, request, {{"error", e.what()}}, info.retry_count);
        throw TransportError(service_ + path + " failed after " +
                             std::to_string(info.retry_count) + " retries: " + e.what());
      }
      if (backoff > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
      ++info.retry_count;
    } catch (const ServiceError& e) {
      if (archive_) archive_->record(service_, request, {{"error", e.what()}}, info.retry_count);
      throw;
    }
  }
}

GenerateResult VlmClient::generate(const MediaRef& media, const std::string& prompt,
                                   const DecodeParams& params) {
  const json body = {
      {"media", media.to_json()},
      {"prompt", prompt},
      {"params", {{"temperature", params.temperature}, {"max_tokens", params.max_tokens}}}};
  auto [resp, info] = call("/generate", body);
  if (!resp.is_object() || !resp.contains("text") || !resp["text"].is_string()) {
    throw ServiceError(200, "generate response lacks a text field");
  }
  return {resp["text"].get<std::string>(), info};
}

DetectorResponse DetectorClient::detect(const DetectorRequest& request) {
  const json body = {{"image", request.image.to_json()},
                     {"queries", request.queries},
                     {"box_threshold", request.box_threshold}};
  auto [resp, info] = call("/detect", body);
  if (!resp.is_object() || !resp.contains("detections") || !resp["detections"].is_array()) {
    throw ServiceError(200, "detect response lacks a detections array");
  }

  DetectorResponse out;
  out.info = info;
  for (const auto& d : resp["detections"]) {
    try {
      const auto& b = d.at("box");
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box");
      geometry::Box box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                        b[3].get<double>()};
      const double conf = d.at("confidence").get<double>();
      std::string label = to_lower(trim(d.at("label").get<std::string>()));
      const auto q = d.at("query_index").get<std::int64_t>();
      if (!box.valid() || !(conf >= 0.0 && conf <= 1.0) || conf < request.box_threshold ||
          label.empty() || q < 0 || static_cast<std::size_t>(q) >= request.queries.size()) {
        ++out.dropped;
        continue;
      }
      out.detections.push_back({{std::move(label), box, conf}, static_cast<std::size_t>(q)});
    } catch (const std::exception&) {
      ++out.dropped;
    }
  }
  return out;
}

EmbedResult EmbedClient::embed(const MediaRef& image) {
  auto [resp, info] = call("/embed", {{"image", image.to_json()}});
  if (!resp.is_object() || !resp.contains("embedding") || !resp["embedding"].is_array()) {
    throw ServiceError(200, "embed response lacks an embedding array");
  }
  EmbedResult out;
  out.info = info;
  out.embedding = resp["embedding"].get<std::vector<double>>();
  if (expected_dim_ != 0 && out.embedding.size() != expected_dim_) {
    throw ProtocolError("embedding dimension " + std::to_string(out.embedding.size()) +
                        " != expected " + std::to_string(expected_dim_));
  }
  double norm = 0.0;
  for (double v : out.embedding) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw std::domain_error("zero or non-finite embedding");
  for (double& v : out.embedding) v /= norm;
  return out;
}

json MockTransport::post(const std::string& path, const json& body, double /*timeout_s*/,
                         const std::optional<std::string>& /*auth_token*/) {
  const int now = ++current_;
  int peak = max_concurrency_.load();
  while (now > peak && !max_concurrency_.compare_exchange_weak(peak, now)) {
  }
  ++calls_;
  struct Leave {
    std::atomic<int>& c;
    ~Leave() { --c; }
  } leave{current_};
  if (latency_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(latency_ms_));
  return respond(path, body);
}

json FlakyTransport::post(const std::string& path, const json& body, double timeout_s,
                          const std::optional<std::string>& auth_token) {
  if (remaining_.fetch_sub(1) > 0) throw TransportError("injected failure");
  return inner_->post(path, body, timeout_s, auth_token);
}

}  // namespace vanguard::clients
