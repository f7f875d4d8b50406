#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vanguard/common.hpp"
#include "vanguard/geometry.hpp"

namespace vanguard::clients {

using nlohmann::json;

struct ServiceEndpoint {
  std::string base_url;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
  std::optional<std::string> auth_token;
  double backoff_initial_s = 0.5;  // doubled after every failed attempt

  void validate() const;
};

/// Retryable failure: timeout, refused connection, dropped socket.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The service answered with a non-success status or an unusable body.
class ServiceError : public ProtocolError {
 public:
  ServiceError(int status, const std::string& excerpt)
      : ProtocolError("service returned status " + std::to_string(status) + ": " + excerpt),
        status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Request/response channel carrying JSON bodies. Implementations throw
/// TransportError for retryable failures and ServiceError otherwise.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual json post(const std::string& path, const json& body, double timeout_s,
                    const std::optional<std::string>& auth_token) = 0;
};

/// HTTP(S) transport backed by cpp-httplib.
class HttpTransport : public Transport {
 public:
  explicit HttpTransport(std::string base_url);
  json post(const std::string& path, const json& body, double timeout_s,
            const std::optional<std::string>& auth_token) override;

 private:
  std::string base_url_;
};

/// Collects request/response transcripts. Records are written sorted by
/// (service, request) so concurrent runs produce identical files.
class Archive {
 public:
  void record(const std::string& service, const json& request, const json& outcome,
              int retry_count);
  std::vector<json> records() const;
  void write(const std::filesystem::path& path) const;

 private:
  mutable std::mutex mu_;
  std::vector<json> records_;
};

struct CallInfo {
  int retry_count = 0;
  double latency_ms = 0.0;
};

/// Reference to media by location; media bytes never travel in requests.
struct MediaRef {
  std::string uri;
  std::optional<std::int64_t> frame_index;
  std::optional<std::int64_t> start_frame;
  std::optional<std::int64_t> end_frame;

  json to_json() const;
  static MediaRef from_json(const json& j);
};

/// Shared retry, in-flight bound and archiving for the three service clients.
class ServiceClient {
 public:
  ServiceClient(std::string service, ServiceEndpoint endpoint, std::shared_ptr<Transport> transport,
                std::shared_ptr<Archive> archive = nullptr);

  const ServiceEndpoint& endpoint() const { return endpoint_; }
  /// Highest number of simultaneous requests observed so far.
  int peak_in_flight() const { return peak_in_flight_.load(); }

 protected:
  std::pair<json, CallInfo> call(const std::string& path, const json& body);

 private:
  std::string service_;
  ServiceEndpoint endpoint_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Archive> archive_;
  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  std::atomic<int> peak_in_flight_{0};
};

struct DecodeParams {
  double temperature = 0.0;
  int max_tokens = 512;
};

struct GenerateResult {
  std::string text;
  CallInfo info;
};

class VlmClient : public ServiceClient {
 public:
  VlmClient(ServiceEndpoint endpoint, std::shared_ptr<Transport> transport,
            std::shared_ptr<Archive> archive = nullptr)
      : ServiceClient("vlm", std::move(endpoint), std::move(transport), std::move(archive)) {}

  /// POST /generate. Decode parameters pass through untouched.
  GenerateResult generate(const MediaRef& media, const std::string& prompt,
                          const DecodeParams& params = {});
};

struct DetectorRequest {
  MediaRef image;
  std::vector<std::string> queries;
  double box_threshold = 0.25;
};

struct ProvenancedDetection {
  geometry::Detection detection;
  std::size_t query_index = 0;  // which query string produced it
};

struct DetectorResponse {
  std::vector<ProvenancedDetection> detections;
  std::size_t dropped = 0;  // entries failing validation
  CallInfo info;
};

class DetectorClient : public ServiceClient {
 public:
  DetectorClient(ServiceEndpoint endpoint, std::shared_ptr<Transport> transport,
                 std::shared_ptr<Archive> archive = nullptr)
      : ServiceClient("detector", std::move(endpoint), std::move(transport), std::move(archive)) {}

  /// POST /detect. Entries with invalid boxes, out-of-range or sub-threshold
  /// confidence, empty labels or unknown query indices are dropped and counted.
  DetectorResponse detect(const DetectorRequest& request);
};

struct EmbedResult {
  std::vector<double> embedding;  // unit norm
  CallInfo info;
};

class EmbedClient : public ServiceClient {
 public:
  EmbedClient(ServiceEndpoint endpoint, std::shared_ptr<Transport> transport,
              std::shared_ptr<Archive> archive = nullptr, std::size_t expected_dim = 0)
      : ServiceClient("embed", std::move(endpoint), std::move(transport), std::move(archive)),
        expected_dim_(expected_dim) {}

  /// POST /embed. Normalizes client-side; throws std::domain_error on a zero
  /// vector and ProtocolError on a dimension mismatch.
  EmbedResult embed(const MediaRef& image);

 private:
  std::size_t expected_dim_;
};

// ---------------------------------------------------------------------------
// Deterministic in-process services for offline runs and tests.

/// Base for mock services: optional latency and a concurrency high-water mark.
class MockTransport : public Transport {
 public:
  json post(const std::string& path, const json& body, double timeout_s,
            const std::optional<std::string>& auth_token) final;

  void set_latency_ms(int ms) { latency_ms_ = ms; }
  int max_concurrency() const { return max_concurrency_.load(); }
  std::size_t calls() const { return calls_.load(); }

 protected:
  virtual json respond(const std::string& path, const json& body) = 0;

 private:
  int latency_ms_ = 0;
  std::atomic<int> current_{0};
  std::atomic<int> max_concurrency_{0};
  std::atomic<std::size_t> calls_{0};
};

/// Fails the first `failures` calls with TransportError, then delegates.
class FlakyTransport : public Transport {
 public:
  FlakyTransport(std::shared_ptr<Transport> inner, int failures)
      : inner_(std::move(inner)), remaining_(failures) {}
  json post(const std::string& path, const json& body, double timeout_s,
            const std::optional<std::string>& auth_token) override;

 private:
  std::shared_ptr<Transport> inner_;
  std::atomic<int> remaining_;
};

/// Synthetic surveillance world shared by the mock services. Everything is a
/// pure function of (seed, video uri), so the embedder, narrator and detector
/// agree on what each video contains.
class MockWorld {
 public:
  struct Object {
    std::string label;
    bool abnormal = false;
    std::string reason;
    double confidence = 0.0;
    geometry::Box box;  // position at frame 0; drifts slowly over time
    bool scene_level = false;  // floor, wall: boxes cover most of the frame
    bool detectable = true;
  };

  struct Video {
    std::string uri;
    std::int64_t total_frames = 0;
    Label label = Label::Normal;
    std::vector<std::int64_t> scene_cuts;  // frames starting a new scene
    std::vector<std::pair<std::int64_t, std::int64_t>> anomalous;  // inclusive frames
    std::vector<Object> objects;
  };

  explicit MockWorld(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  Video video(const std::string& uri) const;
  /// Box of object `i` at `frame`, or nothing when it is not visible there.
  std::optional<geometry::Box> box_at(const Video& v, std::size_t i, std::int64_t frame) const;

 private:
  std::uint64_t seed_;
};

struct MockOptions {
  std::uint64_t seed = 42;
  std::size_t embed_dim = 32;
  int latency_ms = 0;
  /// video basename -> canned narration response (raw text)
  std::map<std::string, std::string> narration_fixtures;
  /// Probability that a chain-of-thought reply omits its final answer line.
  double cot_drop_answer_rate = 0.05;
};

/// Loads "<name>.narration.txt" files from `dir` into narration_fixtures.
void load_narration_fixtures(const std::filesystem::path& dir, MockOptions& options);

struct MockSuite {
  std::shared_ptr<MockTransport> vlm;
  std::shared_ptr<MockTransport> detector;
  std::shared_ptr<MockTransport> embed;
};

MockSuite mock_suite(const MockOptions& options);

}  // namespace vanguard::clients
