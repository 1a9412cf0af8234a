#include <fmt/format.h>
#include <httplib.h>

#include "lacer/llm_agent.hpp"

namespace lacer {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError(fmt::format("endpoint '{}' lacks a scheme", url));
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw ConfigError(fmt::format("unsupported endpoint scheme '{}'", scheme));
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https") throw ConfigError("https endpoints need a build with OpenSSL");
#endif
  const auto path_begin = url.find('/', scheme_end + 3);
  if (path_begin == std::string::npos) return {url, "/"};
  return {url.substr(0, path_begin), url.substr(path_begin)};
}

}  // namespace

HttpBackend::HttpBackend(std::string endpoint, std::string api_key)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)) {
  split_url(endpoint_);
}

nlohmann::json HttpBackend::request_body(std::span<const Message> messages, const AgentConfig& config) {
  nlohmann::json body;
  body["model"] = config.model_id;
  body["temperature"] = config.temperature;
  body["messages"] = nlohmann::json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return body;
}

std::string HttpBackend::response_text(const nlohmann::json& body) {
  const auto& choices = body.at("choices");
  if (!choices.is_array() || choices.empty()) throw TransportError("completion response has no choices");
  const auto& first = choices.front();
  if (first.contains("message")) return first.at("message").at("content").get<std::string>();
  return first.at("text").get<std::string>();
}

std::string HttpBackend::complete(std::span<const Message> messages, const AgentConfig& config) {
  const auto [origin, path] = split_url(endpoint_);
  // One client per call: sessions share no connection state.
  httplib::Client client(origin);
  client.set_connection_timeout(30);
  client.set_read_timeout(300);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto payload = request_body(messages, config).dump();
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) throw TransportError(fmt::format("request to {} failed: {}", endpoint_, httplib::to_string(res.error())));
  if (res->status < 200 || res->status >= 300)
    throw TransportError(fmt::format("request to {} returned HTTP {}", endpoint_, res->status));
  try {
    return response_text(nlohmann::json::parse(res->body));
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(fmt::format("malformed completion response: {}", e.what()));
  }
}

}  // namespace lacer
