#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "vanguard/clients.hpp"

namespace vanguard::clients {

namespace {

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_base(const std::string& url) {
  const auto scheme = url.find("://");
  const auto from = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', from);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

}  // namespace

HttpTransport::HttpTransport(std::string base_url) : base_url_(std::move(base_url)) {
  if (base_url_.rfind("http://", 0) != 0 && base_url_.rfind("https://", 0) != 0) {
    throw std::invalid_argument("unsupported endpoint URL: " + base_url_);
  }
}

json HttpTransport::post(const std::string& path, const json& body, double timeout_s,
                         const std::optional<std::string>& auth_token) {
  const auto [host, prefix] = split_base(base_url_);
  httplib::Client cli(host);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_s));
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);

  httplib::Headers headers;
  if (auth_token) headers.emplace("Authorization", "Bearer " + *auth_token);

  auto res = cli.Post(prefix + path, headers, body.dump(), "application/json");
  if (!res) throw TransportError(httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw ServiceError(res->status, res->body.substr(0, 200));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    throw ServiceError(res->status, "invalid JSON body: " + res->body.substr(0, 200));
  }
}

}  // namespace vanguard::clients
