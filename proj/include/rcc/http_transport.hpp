#pragma once

// cpp-httplib backed chat-completion transport. Define
// CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL) for https endpoints.

#include <cstdlib>
#include <memory>
#include <string>

#include "httplib.h"
#include "rcc/llmgateway.hpp"

namespace rcc::llm {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorKind::Configuration, "endpoint must include a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorKind::Configuration, "unsupported endpoint scheme: " + scheme);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttpTransport final : public Transport {
 public:
  HttpTransport(const BackendConfig& config, std::string api_key)
      : endpoint_(split_endpoint(config.endpoint)), api_key_(std::move(api_key)), timeout_(config.timeout_seconds) {
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (endpoint_.origin.starts_with("https")) {
      fail(ErrorKind::Configuration, "https endpoint requires a build with OpenSSL support");
    }
#endif
  }

  TransportReply send(const ChatRequest& request) override {
    httplib::Client client(endpoint_.origin);
    const auto seconds = static_cast<time_t>(timeout_);
    const auto micros = static_cast<time_t>((timeout_ - static_cast<double>(seconds)) * 1e6);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    const auto result = client.Post(endpoint_.path, headers, to_wire(request).dump(), "application/json");
    if (!result) throw ConnectionFailure("HTTP request failed: " + httplib::to_string(result.error()));
    if (result->status < 200 || result->status >= 300) return {result->status, result->body};
    return {result->status, from_wire(result->body)};
  }

 private:
  Endpoint endpoint_;
  std::string api_key_;
  double timeout_;
};

/// Reads the credential named by `config.credential_env`.
inline std::string resolve_credential(const BackendConfig& config) {
  const char* value = std::getenv(config.credential_env.c_str());
  if (value == nullptr || *value == '\0') {
    fail(ErrorKind::Configuration, "credential environment variable " + config.credential_env + " is not set");
  }
  return value;
}

/// Builds a client for `config`. MOCK backends answer with the rule-based mock.
inline std::shared_ptr<Client> make_client(const BackendConfig& config, TemplateStore templates = TemplateStore::builtin()) {
  config.validate();
  std::shared_ptr<Transport> transport;
  if (config.kind == BackendKind::Mock) {
    transport = mock_script({mock::Rule{}});
  } else {
    transport = std::make_shared<HttpTransport>(config, resolve_credential(config));
  }
  return std::make_shared<Client>(config, std::move(transport), std::move(templates));
}

}  // namespace rcc::llm
