#include "safetypairs/mock_models.hpp"

#include <httplib.h>

#include <cmath>

#include "safetypairs/codec.hpp"

using nlohmann::json;

namespace sp::mock {

namespace {

const char* const kRoutes[] = {"chat", "edit", "vqa", "guard", "embed"};

bool known_route(const std::string& r) {
  for (const char* k : kRoutes) {
    if (r == k) return true;
  }
  return false;
}

TextMatcher parse_matcher(const std::string& field, const json& j) {
  TextMatcher m;
  if (j.is_string()) {
    m.equals = j.get<std::string>();
  } else if (j.is_object()) {
    if (j.contains("equals")) m.equals = j["equals"].get<std::string>();
    if (j.contains("contains")) m.contains = j["contains"].get<std::string>();
  }
  if (!m.equals && !m.contains) {
    throw SchemaError("match", "matcher for '" + field + "' needs a string, {equals} or {contains}");
  }
  return m;
}

std::string substitute(std::string s, const json& req) {
  for (const char* key : {"seed", "instruction", "question", "prompt"}) {
    const std::string ph = std::string("{") + key + "}";
    std::string value;
    if (req.contains(key)) {
      value = req[key].is_string() ? req[key].get<std::string>() : req[key].dump();
    }
    for (std::size_t pos = s.find(ph); pos != std::string::npos; pos = s.find(ph, pos + value.size())) {
      s.replace(pos, ph.size(), value);
    }
  }
  return s;
}

json substitute_all(const json& j, const json& req) {
  if (j.is_string()) return substitute(j.get<std::string>(), req);
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = substitute_all(it.value(), req);
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& v : j) out.push_back(substitute_all(v, req));
    return out;
  }
  return j;
}

std::vector<double> hash_vector(const Bytes& image, std::size_t d) {
  const std::string base = sha256_hex(image);
  std::vector<double> v(d);
  double norm = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    std::string h = sha256_hex(base + ":" + std::to_string(i));
    double u = static_cast<double>(std::stoull(h.substr(0, 12), nullptr, 16)) / static_cast<double>(1ULL << 48);
    v[i] = 2.0 * u - 1.0;
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& x : v) x /= norm;
  }
  return v;
}

}  // namespace

bool TextMatcher::matches(std::string_view value) const {
  if (equals && value != *equals) return false;
  if (contains && value.find(*contains) == std::string_view::npos) return false;
  return true;
}

Scenario parse_scenario(const json& j) {
  Scenario s;
  try {
    if (j.contains("auth_token")) s.auth_token = j["auth_token"].get<std::string>();
    for (const auto& rj : j.at("rules")) {
      Rule r;
      r.route = rj.at("route").get<std::string>();
      if (!known_route(r.route)) {
        throw SchemaError("route", "unknown route '" + r.route + "'");
      }
      if (rj.contains("match")) {
        for (auto it = rj["match"].begin(); it != rj["match"].end(); ++it) {
          if (it.key() == "seed") {
            r.seed = it.value().get<std::int64_t>();
          } else {
            r.fields.emplace_back(it.key(), parse_matcher(it.key(), it.value()));
          }
        }
      }
      if (rj.contains("response")) r.response = rj["response"];
      r.status = rj.value("status", 200);
      if (rj.contains("fail")) {
        FailureInjection f;
        f.status = rj["fail"].value("status", 500);
        f.times = rj["fail"].value("times", 1);
        r.fail = f;
      }
      r.delay_ms = rj.value("delay_ms", 0);
      s.rules.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw SchemaError("rules", std::string("malformed scenario: ") + e.what());
  }
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  try {
    return parse_scenario(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw SchemaError("scenario", "scenario '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

MockModels::MockModels(Scenario scenario)
    : scenario_(std::move(scenario)), epoch_(std::chrono::steady_clock::now()), fail_counts_(scenario_.rules.size(), 0) {}

Response MockModels::handle(const std::string& route, const std::string& body, const std::optional<std::string>& bearer) {
  auto now_us = [&] {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count();
  };
  const auto received = now_us();

  json entry{{"route", route}, {"received_us", received}};
  Response resp;
  int rule_index = -1;

  auto finish = [&](int status, const json& payload) {
    resp.status = status;
    resp.body = payload.dump();
    entry["status"] = status;
    entry["rule"] = rule_index;
    entry["responded_us"] = now_us();
    std::lock_guard lock(mu_);
    entry["seq"] = log_.size();
    log_.push_back(entry);
    return resp;
  };

  json req;
  try {
    req = json::parse(body);
  } catch (const json::parse_error&) {
    return finish(400, json{{"error", "request body is not JSON"}});
  }
  Bytes image;
  json logged = req;
  if (req.contains("image_b64") && req["image_b64"].is_string()) {
    try {
      image = base64_decode(req["image_b64"].get<std::string>());
    } catch (const Error&) {
      return finish(400, json{{"error", "image_b64 is not base64"}});
    }
    logged.erase("image_b64");
    logged["image_sha256"] = sha256_hex(image);
  }
  entry["request"] = logged;

  if (scenario_.auth_token && bearer != scenario_.auth_token) {
    return finish(401, json{{"error", "missing or wrong bearer token"}});
  }

  const std::string image_text(image.begin(), image.end());
  for (std::size_t i = 0; i < scenario_.rules.size(); ++i) {
    const Rule& r = scenario_.rules[i];
    if (r.route != route) continue;
    if (r.seed && (!req.contains("seed") || !req["seed"].is_number_integer() ||
                   req["seed"].get<std::int64_t>() != *r.seed)) {
      continue;
    }
    bool ok = true;
    for (const auto& [field, m] : r.fields) {
      if (field == "image") {
        ok = m.matches(image_text);
      } else {
        ok = req.contains(field) && req[field].is_string() && m.matches(req[field].get<std::string>());
      }
      if (!ok) break;
    }
    if (!ok) continue;
    rule_index = static_cast<int>(i);
    break;
  }
  if (rule_index < 0) {
    return finish(404, json{{"error", "no scenario rule matches this request"}});
  }

  const Rule& rule = scenario_.rules[static_cast<std::size_t>(rule_index)];
  if (rule.delay_ms > 0) {
    std::this_thread::sleep_for(std::chrono::milliseconds(rule.delay_ms));
  }
  if (rule.fail) {
    bool inject = false;
    {
      std::lock_guard lock(mu_);
      int& n = fail_counts_[static_cast<std::size_t>(rule_index)];
      if (rule.fail->times < 0 || n < rule.fail->times) {
        ++n;
        inject = true;
      }
    }
    if (inject) {
      return finish(rule.fail->status, json{{"error", "injected failure"}});
    }
  }
  if (rule.status != 200) {
    return finish(rule.status, substitute_all(rule.response, req));
  }

  json out = substitute_all(rule.response, req);
  if (route == "edit") {
    if (out.contains("identity")) {
      out.erase("identity");
      out["image_b64"] = base64_encode(image);
    } else if (out.contains("image_tag")) {
      Bytes png = tagged_png(out["image_tag"].get<std::string>());
      out.erase("image_tag");
      out["image_b64"] = base64_encode(png);
    }
  } else if (route == "embed" && out.contains("hash_vector")) {
    auto d = out["hash_vector"].get<std::size_t>();
    out.erase("hash_vector");
    out["vector"] = hash_vector(image, d);
  }
  return finish(200, out);
}

json MockModels::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

struct MockServer::Impl {
  httplib::Server server;
};

std::unique_ptr<MockServer> MockServer::serve(Scenario scenario, int port, const std::string& host) {
  std::unique_ptr<MockServer> s(new MockServer());
  s->impl_ = std::make_unique<Impl>();
  s->models_ = std::make_shared<MockModels>(std::move(scenario));
  s->host_ = host;

  auto& srv = s->impl_->server;
  srv.new_task_queue = [] { return new httplib::ThreadPool(32); };
  // SO_REUSEPORT would let a second server bind a port that is in use.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  auto models = s->models_;
  srv.Post(R"(/v1/(chat|edit|vqa|guard|embed))", [models](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> bearer;
    auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) bearer = auth.substr(7);
    Response r = models->handle(req.matches[1].str(), req.body, bearer);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
  srv.Get("/_log", [models](const httplib::Request&, httplib::Response& res) {
    res.set_content(models->log().dump(), "application/json");
  });

  if (port == 0) {
    s->port_ = srv.bind_to_any_port(host);
    if (s->port_ <= 0) throw PortInUseError("cannot bind any port on " + host);
  } else {
    if (!srv.bind_to_port(host, port)) {
      throw PortInUseError("port " + std::to_string(port) + " on " + host + " is already in use");
    }
    s->port_ = port;
  }
  s->thread_ = std::thread([raw = s.get()] { raw->impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
  return s;
}

MockServer::~MockServer() { stop(); }

std::string MockServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void MockServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

namespace {

class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(std::shared_ptr<MockModels> models) : models_(std::move(models)) {}

  HttpResult post(const std::string& route, const std::string& json_body, const std::optional<std::string>& bearer,
                  double) override {
    const std::string prefix = "/v1/";
    if (route.rfind(prefix, 0) != 0) return HttpResult{404, "{}", ""};
    Response r = models_->handle(route.substr(prefix.size()), json_body, bearer);
    return HttpResult{r.status, std::move(r.body), ""};
  }

 private:
  std::shared_ptr<MockModels> models_;
};

}  // namespace

std::shared_ptr<Transport> make_in_process_transport(std::shared_ptr<MockModels> models) {
  return std::make_shared<InProcessTransport>(std::move(models));
}

}  // namespace sp::mock
