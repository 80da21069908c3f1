#include "safetypairs/gateway.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <thread>

#include "safetypairs/codec.hpp"

using nlohmann::json;

namespace sp {

const char* to_string(Role r) {
  switch (r) {
    case Role::captioner: return "captioner";
    case Role::instructor: return "instructor";
    case Role::editor: return "editor";
    case Role::vqa: return "vqa";
    case Role::guard: return "guard";
    case Role::embedder: return "embedder";
  }
  return "?";
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::captioner, Role::instructor, Role::editor, Role::vqa, Role::guard, Role::embedder}) {
    if (s == to_string(r)) return r;
  }
  throw SchemaError("role", "unknown endpoint role \"" + s + "\"");
}

void EndpointConfig::validate() const {
  if (name.empty()) throw SchemaError("name", "endpoint name is empty");
  if (base_url.empty()) throw SchemaError("base_url", "endpoint '" + name + "' has no base_url");
  if (max_concurrent < 1) throw SchemaError("max_concurrent", "endpoint '" + name + "': max_concurrent must be >= 1");
  if (!(timeout > 0)) throw SchemaError("timeout", "endpoint '" + name + "': timeout must be > 0");
  if (retry.max_attempts < 1) throw SchemaError("retry", "endpoint '" + name + "': max_attempts must be >= 1");
  if (retry.base_backoff < 0) throw SchemaError("retry", "endpoint '" + name + "': base_backoff must be >= 0");
}

void to_json(json& j, const EndpointConfig& c) {
  j = json{{"name", c.name},
           {"role", to_string(c.role)},
           {"base_url", c.base_url},
           {"max_concurrent", c.max_concurrent},
           {"timeout", c.timeout},
           {"retry", {{"max_attempts", c.retry.max_attempts}, {"base_backoff", c.retry.base_backoff}}},
           {"logits", c.logits}};
  // auth_token stays out of serialized configs and hashes.
}

void from_json(const json& j, EndpointConfig& c) {
  try {
    c.name = j.at("name").get<std::string>();
    c.role = parse_role(j.at("role").get<std::string>());
    c.base_url = j.at("base_url").get<std::string>();
    if (j.contains("auth_token") && !j["auth_token"].is_null()) c.auth_token = j["auth_token"].get<std::string>();
    c.max_concurrent = j.value("max_concurrent", 4);
    c.timeout = j.value("timeout", 60.0);
    if (j.contains("retry")) {
      c.retry.max_attempts = j["retry"].value("max_attempts", 3);
      c.retry.base_backoff = j["retry"].value("base_backoff", 0.5);
    }
    c.logits = j.value("logits", true);
  } catch (const json::exception& e) {
    throw SchemaError("endpoints", std::string("malformed endpoint config: ") + e.what());
  }
  c.validate();
}

std::optional<Answer> parse_yes_no(std::string_view raw) {
  std::string s = to_lower(raw);
  std::size_t i = 0;
  while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) || std::ispunct(static_cast<unsigned char>(s[i])))) {
    ++i;
  }
  std::size_t j = i;
  while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) ++j;
  std::string_view token(s.data() + i, j - i);
  if (token == "yes") return Answer::yes;
  if (token == "no") return Answer::no;
  return std::nullopt;
}

namespace {

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(const std::string& base_url) {
    auto scheme = base_url.find("://");
    std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
    auto slash = base_url.find('/', host_start);
    if (slash == std::string::npos) {
      origin_ = base_url;
    } else {
      origin_ = base_url.substr(0, slash);
      prefix_ = base_url.substr(slash);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
  }

  HttpResult post(const std::string& route, const std::string& json_body, const std::optional<std::string>& bearer,
                  double timeout_seconds) override {
    // One client per request keeps concurrent calls independent.
    httplib::Client cli(origin_);
    auto secs = static_cast<time_t>(timeout_seconds);
    auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (bearer) headers.emplace("Authorization", "Bearer " + *bearer);
    auto res = cli.Post(prefix_ + route, headers, json_body, "application/json");
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  }

 private:
  std::string origin_;
  std::string prefix_;
};

bool transient(int status) { return status == 0 || status == 429 || status >= 500; }

std::string describe(const HttpResult& r) {
  if (r.status == 0) return "network error: " + r.error;
  std::string body = r.body.size() > 200 ? r.body.substr(0, 200) + "..." : r.body;
  return "HTTP " + std::to_string(r.status) + ": " + body;
}

}  // namespace

std::shared_ptr<Transport> make_http_transport(const std::string& base_url) {
  return std::make_shared<HttpTransport>(base_url);
}

FifoLimiter::FifoLimiter(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw PreconditionError("limiter capacity must be >= 1");
}

void FifoLimiter::acquire() {
  std::unique_lock lock(mu_);
  const std::uint64_t ticket = next_ticket_++;
  cv_.wait(lock, [&] { return ticket == now_serving_ && in_flight_ < capacity_; });
  ++now_serving_;
  ++in_flight_;
  cv_.notify_all();
}

void FifoLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_all();
}

int FifoLimiter::in_flight() const {
  std::lock_guard lock(mu_);
  return in_flight_;
}

ModelClient::ModelClient(EndpointConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleeper,
                         std::uint64_t jitter_seed)
    : cfg_(std::move(cfg)),
      transport_(transport ? std::move(transport) : make_http_transport(cfg_.base_url)),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); })),
      limiter_(cfg_.max_concurrent),
      jitter_rng_(jitter_seed) {
  cfg_.validate();
}

std::vector<double> ModelClient::backoff_history() const {
  std::lock_guard lock(mu_);
  return backoffs_;
}

std::size_t ModelClient::total_attempts() const {
  std::lock_guard lock(mu_);
  return attempts_;
}

void ModelClient::require_role(std::initializer_list<Role> allowed, const char* op) const {
  for (Role r : allowed) {
    if (cfg_.role == r) return;
  }
  throw PreconditionError(std::string(op) + " is not available on '" + cfg_.name + "' (role " + to_string(cfg_.role) +
                          ")");
}

json ModelClient::call(const std::string& route, const json& body) {
  const std::string payload = body.dump();
  std::vector<std::string> log;
  for (int attempt = 0; attempt < cfg_.retry.max_attempts; ++attempt) {
    HttpResult res;
    {
      FifoLimiter::Permit permit(limiter_);
      {
        std::lock_guard lock(mu_);
        ++attempts_;
      }
      res = transport_->post(route, payload, cfg_.auth_token, cfg_.timeout);
    }
    if (res.status >= 200 && res.status < 300) {
      try {
        return json::parse(res.body);
      } catch (const json::parse_error&) {
        throw ProtocolError(cfg_.name + route + ": response is not JSON");
      }
    }
    log.push_back("attempt " + std::to_string(attempt + 1) + ": " + describe(res));
    if (!transient(res.status)) {
      throw PermanentError(res.status, cfg_.name + route + " failed permanently: " + describe(res));
    }
    if (attempt + 1 < cfg_.retry.max_attempts) {
      double delay;
      {
        std::lock_guard lock(mu_);
        std::uniform_real_distribution<double> jitter(0.8, 1.2);
        delay = cfg_.retry.base_backoff * std::ldexp(1.0, attempt) * jitter(jitter_rng_);
        backoffs_.push_back(delay);
      }
      sleeper_(delay);
    }
  }
  throw TransportError(cfg_.name + route + ": gave up after " + std::to_string(cfg_.retry.max_attempts) + " attempts",
                       std::move(log));
}

std::string ModelClient::chat_complete(std::string_view prompt, double temperature, std::optional<std::int64_t> seed,
                                       const Bytes* image) {
  require_role({Role::captioner, Role::instructor, Role::vqa}, "chat_complete");
  json body{{"prompt", prompt}, {"temperature", temperature}};
  if (seed) body["seed"] = *seed;
  if (image) {
    if (!sniff_image(*image)) throw PreconditionError("chat image is neither PNG nor JPEG");
    body["image_b64"] = base64_encode(*image);
  }
  json res = call("/v1/chat", body);
  if (!res.is_object() || !res.contains("text") || !res["text"].is_string()) {
    throw ProtocolError(cfg_.name + "/v1/chat: response lacks 'text'");
  }
  return res["text"].get<std::string>();
}

Bytes ModelClient::edit_image(const Bytes& image, std::string_view instruction, std::int64_t seed) {
  require_role({Role::editor}, "edit_image");
  if (trim(instruction).empty()) {
    throw PreconditionError("edit instruction is empty");
  }
  if (!sniff_image(image)) {
    throw PreconditionError("input image is neither PNG nor JPEG");
  }
  json res = call("/v1/edit", json{{"image_b64", base64_encode(image)}, {"instruction", instruction}, {"seed", seed}});
  if (!res.is_object() || !res.contains("image_b64") || !res["image_b64"].is_string()) {
    throw ProtocolError(cfg_.name + "/v1/edit: response lacks 'image_b64'");
  }
  Bytes out;
  try {
    out = base64_decode(res["image_b64"].get<std::string>());
  } catch (const Error& e) {
    throw ProtocolError(cfg_.name + "/v1/edit: undecodable image payload (" + e.what() + ")");
  }
  if (!sniff_image(out)) {
    throw ProtocolError(cfg_.name + "/v1/edit: returned payload is not a PNG or JPEG image");
  }
  return out;
}

VqaReply ModelClient::vqa_answer(const Bytes& image, std::string_view question) {
  require_role({Role::vqa}, "vqa_answer");
  if (trim(question).empty()) {
    throw PreconditionError("VQA question is empty");
  }
  json res = call("/v1/vqa", json{{"image_b64", base64_encode(image)}, {"question", question}});
  if (!res.is_object() || !res.contains("text") || !res["text"].is_string()) {
    throw ProtocolError(cfg_.name + "/v1/vqa: response lacks 'text'");
  }
  std::string raw = res["text"].get<std::string>();
  auto ans = parse_yes_no(raw);
  if (!ans) throw VqaParseError(raw);
  return VqaReply{*ans, raw};
}

GuardLogits ModelClient::guard_logits(const Bytes& image, std::string_view prompt) {
  require_role({Role::guard}, "guard_logits");
  if (!cfg_.logits) {
    throw CapabilityError("endpoint '" + cfg_.name + "' is configured without logit support");
  }
  json res = call("/v1/guard", json{{"image_b64", base64_encode(image)}, {"prompt", prompt}});
  auto number = [&](const char* field) {
    if (!res.is_object() || !res.contains(field) || !res[field].is_number()) {
      throw CapabilityError("endpoint '" + cfg_.name + "' did not report '" + field + "'");
    }
    double v = res[field].get<double>();
    if (!std::isfinite(v)) {
      throw ProtocolError("endpoint '" + cfg_.name + "' reported a non-finite " + field);
    }
    return v;
  };
  return GuardLogits{number("logit_yes"), number("logit_no")};
}

std::string ModelClient::guard_text(const Bytes& image, std::string_view prompt) {
  require_role({Role::guard}, "guard_text");
  json res = call("/v1/vqa", json{{"image_b64", base64_encode(image)}, {"question", prompt}});
  if (!res.is_object() || !res.contains("text") || !res["text"].is_string()) {
    throw ProtocolError(cfg_.name + "/v1/vqa: response lacks 'text'");
  }
  return res["text"].get<std::string>();
}

std::vector<double> ModelClient::embed_image(const Bytes& image) {
  require_role({Role::embedder}, "embed_image");
  json res = call("/v1/embed", json{{"image_b64", base64_encode(image)}});
  if (!res.is_object() || !res.contains("vector") || !res["vector"].is_array()) {
    throw ProtocolError(cfg_.name + "/v1/embed: response lacks 'vector'");
  }
  std::vector<double> v;
  try {
    v = res["vector"].get<std::vector<double>>();
  } catch (const json::exception&) {
    throw ProtocolError(cfg_.name + "/v1/embed: 'vector' is not numeric");
  }
  std::lock_guard lock(mu_);
  if (!embed_dim_) {
    embed_dim_ = v.size();
  } else if (*embed_dim_ != v.size()) {
    throw DimensionError("endpoint '" + cfg_.name + "' returned dimension " + std::to_string(v.size()) +
                         ", expected " + std::to_string(*embed_dim_));
  }
  return v;
}

}  // namespace sp
