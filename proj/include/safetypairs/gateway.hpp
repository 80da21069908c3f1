#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "safetypairs/common.hpp"
#include "safetypairs/records.hpp"

namespace sp {

enum class Role { captioner, instructor, editor, vqa, guard, embedder };
const char* to_string(Role r);
Role parse_role(const std::string& s);

struct RetryPolicy {
  int max_attempts = 3;
  double base_backoff = 0.5;  // seconds
};

struct EndpointConfig {
  std::string name;
  Role role = Role::vqa;
  std::string base_url;
  std::optional<std::string> auth_token;
  int max_concurrent = 4;
  double timeout = 60.0;  // seconds
  RetryPolicy retry;
  /// Guard endpoints only: false means the endpoint cannot report token
  /// logits and is queried for a text answer instead.
  bool logits = true;

  /// Throws SchemaError on violated invariants.
  void validate() const;
};

void to_json(nlohmann::json& j, const EndpointConfig& c);
void from_json(const nlohmann::json& j, EndpointConfig& c);

struct GuardLogits {
  double logit_yes = 0.0;
  double logit_no = 0.0;
  bool operator==(const GuardLogits&) const = default;
};

struct VqaReply {
  Answer answer = Answer::no;
  std::string raw;
};

/// Retries exhausted on transient failures (network, 5xx, 429).
class TransportError : public Error {
 public:
  TransportError(const std::string& what, std::vector<std::string> attempts)
      : Error(what), attempts_(std::move(attempts)) {}
  const std::vector<std::string>& attempts() const { return attempts_; }

 private:
  std::vector<std::string> attempts_;
};

/// Non-retryable HTTP failure (4xx other than 429).
class PermanentError : public Error {
 public:
  PermanentError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// 2xx response whose payload does not fit the wire schema.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// The endpoint does not provide what was asked (e.g. no token logits).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class VqaParseError : public Error {
 public:
  explicit VqaParseError(std::string raw)
      : Error("cannot read a yes/no answer from \"" + raw + "\""), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Lowercases, strips punctuation and whitespace, and reads the leading
/// token as yes/no.
std::optional<Answer> parse_yes_no(std::string_view raw);

struct HttpResult {
  int status = 0;  // 0: the request never got a response
  std::string body;
  std::string error;
};

/// One POST of a JSON body to `route` (e.g. "/v1/chat").
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResult post(const std::string& route, const std::string& json_body,
                          const std::optional<std::string>& bearer, double timeout_seconds) = 0;
};

std::shared_ptr<Transport> make_http_transport(const std::string& base_url);

/// Counting limiter that admits waiters strictly in arrival order.
class FifoLimiter {
 public:
  explicit FifoLimiter(int capacity);

  class Permit {
   public:
    explicit Permit(FifoLimiter& l) : l_(&l) { l_->acquire(); }
    ~Permit() {
      if (l_) l_->release();
    }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    FifoLimiter* l_;
  };

  void acquire();
  void release();
  int in_flight() const;
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_ticket_ = 0;
  std::uint64_t now_serving_ = 0;
  int in_flight_ = 0;
};

using Sleeper = std::function<void(double seconds)>;

/// Client for one external model endpoint. Thread-safe; requests beyond
/// max_concurrent wait in FIFO order.
class ModelClient {
 public:
  explicit ModelClient(EndpointConfig cfg, std::shared_ptr<Transport> transport = nullptr, Sleeper sleeper = nullptr,
                       std::uint64_t jitter_seed = 0);

  const EndpointConfig& config() const { return cfg_; }

  /// `image`, when given, is sent along for captioning.
  std::string chat_complete(std::string_view prompt, double temperature, std::optional<std::int64_t> seed,
                            const Bytes* image = nullptr);
  Bytes edit_image(const Bytes& image, std::string_view instruction, std::int64_t seed);
  /// Throws VqaParseError when the reply is neither yes nor no.
  VqaReply vqa_answer(const Bytes& image, std::string_view question);
  GuardLogits guard_logits(const Bytes& image, std::string_view prompt);
  /// Text-answer route for guard endpoints without logit support.
  std::string guard_text(const Bytes& image, std::string_view prompt);
  std::vector<double> embed_image(const Bytes& image);

  /// Every backoff delay slept so far, in seconds.
  std::vector<double> backoff_history() const;
  /// HTTP attempts made by this client so far.
  std::size_t total_attempts() const;

 private:
  void require_role(std::initializer_list<Role> allowed, const char* op) const;
  nlohmann::json call(const std::string& route, const nlohmann::json& body);

  EndpointConfig cfg_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  FifoLimiter limiter_;

  mutable std::mutex mu_;
  std::mt19937_64 jitter_rng_;
  std::vector<double> backoffs_;
  std::size_t attempts_ = 0;
  std::optional<std::size_t> embed_dim_;
};

}  // namespace sp
