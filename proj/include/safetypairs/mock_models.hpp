#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "safetypairs/common.hpp"
#include "safetypairs/gateway.hpp"

namespace sp::mock {

/// Exact or substring match on one request field. For the "image" field the
/// comparison runs over the decoded image bytes.
struct TextMatcher {
  std::optional<std::string> equals;
  std::optional<std::string> contains;

  bool matches(std::string_view value) const;
};

struct FailureInjection {
  int status = 500;
  int times = 1;  // -1: every match fails
};

/// One scenario rule. `route` is one of chat, edit, vqa, guard, embed.
///
/// Response objects are sent back as JSON after substituting {seed},
/// {instruction}, {question} and {prompt} in string values. A few keys are
/// expanded instead of returned verbatim:
///   edit:  "image_tag": T  -> image_b64 of a small PNG carrying tag T
///          "identity": true -> image_b64 echoes the input image
///   embed: "hash_vector": d -> a unit vector of length d derived from the
///          image hash
struct Rule {
  std::string route;
  std::vector<std::pair<std::string, TextMatcher>> fields;
  std::optional<std::int64_t> seed;
  nlohmann::json response = nlohmann::json::object();
  int status = 200;
  std::optional<FailureInjection> fail;
  int delay_ms = 0;
};

/// Ordered rules; the first matching rule wins and no match yields 404.
struct Scenario {
  std::vector<Rule> rules;
  std::optional<std::string> auth_token;
};

Scenario parse_scenario(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);

struct Response {
  int status = 200;
  std::string body;
};

/// The in-process rule engine behind the HTTP server. Thread-safe.
class MockModels {
 public:
  explicit MockModels(Scenario scenario);

  /// Serves one request body for `route` ("chat", "edit", ...).
  Response handle(const std::string& route, const std::string& body, const std::optional<std::string>& bearer = {});

  /// Ordered request log: seq, route, rule, status, request (images replaced
  /// by their sha256), received_us, responded_us.
  nlohmann::json log() const;

 private:
  Scenario scenario_;
  std::chrono::steady_clock::time_point epoch_;
  mutable std::mutex mu_;
  std::vector<int> fail_counts_;
  nlohmann::json log_ = nlohmann::json::array();
};

/// Transport that hands requests straight to `models`, skipping HTTP.
std::shared_ptr<Transport> make_in_process_transport(std::shared_ptr<MockModels> models);

class PortInUseError : public Error {
 public:
  using Error::Error;
};

/// HTTP front end serving the model wire schema plus GET /_log.
class MockServer {
 public:
  /// Binds 127.0.0.1:`port` (0 picks a free port) and starts serving.
  static std::unique_ptr<MockServer> serve(Scenario scenario, int port, const std::string& host = "127.0.0.1");
  ~MockServer();

  int port() const { return port_; }
  std::string base_url() const;
  nlohmann::json log() const { return models_->log(); }
  void stop();
  /// Blocks until the server stops.
  void wait();

 private:
  MockServer() = default;
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<MockModels> models_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace sp::mock
