#include "safetypairs/review.hpp"

#include <httplib.h>

#include <algorithm>
#include <tuple>

#include "safetypairs/mock_models.hpp"

using nlohmann::json;

namespace sp::review {

void to_json(json& j, const ReviewItem& item) {
  j = json{{"candidate_id", item.candidate_id},
           {"source_id", item.source_id},
           {"source_image_ref", item.source_image_ref},
           {"source_image_hash", item.source_image_hash},
           {"edited_image_ref", item.edited_image_ref},
           {"edited_image_hash", item.edited_image_hash},
           {"instruction", item.instruction},
           {"constraint_report", item.constraint_report},
           {"policy_id", item.policy_id},
           {"policy_text", item.policy_text},
           {"rationale", item.rationale}};
}

ReviewService::ReviewService(Store& store, const PolicySet& policies, std::chrono::seconds lease, Clock clock)
    : store_(store),
      policies_(policies),
      lease_(lease),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); })) {
  if (!store_.writable()) {
    throw PreconditionError("review service needs a store opened for writing");
  }
}

std::vector<ReviewItem> ReviewService::next_items(const std::string& reviewer, int limit) {
  if (limit < 1) throw PreconditionError("limit must be >= 1");

  std::vector<CandidateEdit> pending;
  for (auto& c : store_.candidates()) {
    if (c.vqa_verdict == VqaVerdict::pass && c.review_verdict == ReviewVerdict::pending) {
      pending.push_back(std::move(c));
    }
  }
  std::sort(pending.begin(), pending.end(), [](const CandidateEdit& a, const CandidateEdit& b) {
    return std::tie(a.source_id, a.candidate_id) < std::tie(b.source_id, b.candidate_id);
  });

  std::vector<ReviewItem> items;
  std::lock_guard lock(mu_);
  const auto now = clock_();
  for (const auto& c : pending) {
    if (static_cast<int>(items.size()) >= limit) break;
    auto lease = leases_.find(c.candidate_id);
    if (lease != leases_.end() && lease->second.reviewer != reviewer && lease->second.expires > now) {
      continue;
    }
    auto src = store_.find_source(c.source_id);
    if (!src) continue;
    ReviewItem item;
    item.candidate_id = c.candidate_id;
    item.source_id = c.source_id;
    item.source_image_ref = src->image_ref;
    item.source_image_hash = src->image_hash;
    item.edited_image_ref = c.edited_image_ref.value_or("");
    item.edited_image_hash = c.edited_image_hash.value_or("");
    item.instruction = c.instruction;
    item.constraint_report = c.vqa_answers;
    item.policy_id = src->policy_id;
    item.policy_text = policies_.contains(src->policy_id) ? render_policy(policies_.at(src->policy_id)) : "";
    item.rationale = src->rationale;
    leases_[c.candidate_id] = Lease{reviewer, now + lease_};
    items.push_back(std::move(item));
  }
  return items;
}

CandidateEdit ReviewService::submit_decision(const std::string& candidate_id, ReviewVerdict verdict,
                                             const std::string& reviewer, std::optional<std::string> note) {
  if (verdict == ReviewVerdict::pending) {
    throw PreconditionError("a decision must be accepted or rejected");
  }
  if (reviewer.empty()) {
    throw PreconditionError("reviewer is required");
  }
  std::lock_guard lock(mu_);
  auto current = store_.find_candidate(candidate_id);
  if (!current) {
    throw NotFoundError("unknown candidate '" + candidate_id + "'");
  }
  if (current->vqa_verdict != VqaVerdict::pass) {
    throw PreconditionError("candidate '" + candidate_id + "' did not pass the VQA check");
  }
  leases_.erase(candidate_id);
  if (current->review_verdict == verdict && current->reviewer == reviewer) {
    return *current;
  }
  CandidateEdit next = *current;
  next.review_verdict = verdict;
  next.reviewer = reviewer;
  next.note = std::move(note);
  return store_.supersede_candidate(std::move(next));
}

struct ReviewServer::Impl {
  httplib::Server server;
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

std::unique_ptr<ReviewServer> ReviewServer::serve(ReviewService& service, const Options& options) {
  std::unique_ptr<ReviewServer> s(new ReviewServer());
  s->impl_ = std::make_unique<Impl>();
  s->host_ = options.host;
  auto& srv = s->impl_->server;
  const auto token = options.bearer_token;
  // SO_REUSEPORT would let a second server bind a port that is in use.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  srv.set_pre_routing_handler([token](const httplib::Request& req, httplib::Response& res) {
    if (token && req.path.rfind("/api/", 0) == 0 && req.get_header_value("Authorization") != "Bearer " + *token) {
      send_json(res, 401, json{{"error", "missing or wrong bearer token"}});
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  srv.Get("/api/review/next", [&service](const httplib::Request& req, httplib::Response& res) {
    int limit = 10;
    if (req.has_param("limit")) {
      try {
        limit = std::stoi(req.get_param_value("limit"));
      } catch (const std::exception&) {
        return send_json(res, 400, json{{"error", "limit must be an integer"}});
      }
    }
    const std::string reviewer = req.has_param("reviewer") ? req.get_param_value("reviewer") : "anonymous";
    try {
      send_json(res, 200, json(service.next_items(reviewer, limit)));
    } catch (const PreconditionError& e) {
      send_json(res, 400, json{{"error", e.what()}});
    }
  });

  srv.Post("/api/review/decision", [&service](const httplib::Request& req, httplib::Response& res) {
    json body;
    std::string candidate_id, reviewer;
    ReviewVerdict verdict;
    std::optional<std::string> note;
    try {
      body = json::parse(req.body);
      candidate_id = body.at("candidate_id").get<std::string>();
      verdict = parse_review_verdict(body.at("verdict").get<std::string>(), "verdict");
      reviewer = body.at("reviewer").get<std::string>();
      if (body.contains("note") && body["note"].is_string()) note = body["note"].get<std::string>();
    } catch (const std::exception& e) {
      return send_json(res, 400, json{{"error", std::string("bad decision: ") + e.what()}});
    }
    try {
      CandidateEdit c = service.submit_decision(candidate_id, verdict, reviewer, note);
      send_json(res, 200,
                json{{"candidate_id", c.candidate_id},
                     {"review_verdict", to_string(c.review_verdict)},
                     {"reviewer", c.reviewer.value_or("")},
                     {"revision", c.revision}});
    } catch (const NotFoundError& e) {
      send_json(res, 404, json{{"error", e.what()}});
    } catch (const PreconditionError& e) {
      send_json(res, 409, json{{"error", e.what()}});
    }
  });

  srv.Get("/api/review/stats", [&service](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, json(service.stats()));
  });

  srv.Get(R"(/api/review/history/([A-Za-z0-9_\-]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    auto hist = service.history(req.matches[1].str());
    if (hist.empty()) return send_json(res, 404, json{{"error", "unknown candidate"}});
    send_json(res, 200, json(hist));
  });

  srv.Get(R"(/api/image/([0-9a-f]{64}))", [&service](const httplib::Request& req, httplib::Response& res) {
    auto path = service.store().image_path_by_hash(req.matches[1].str());
    if (!path) return send_json(res, 404, json{{"error", "no image with that hash"}});
    std::string bytes = read_file(*path);
    res.set_content(bytes, path->extension() == ".png" ? "image/png" : "image/jpeg");
  });

  if (options.static_dir) {
    if (!srv.set_mount_point("/", options.static_dir->string())) {
      throw NotFoundError("static directory '" + options.static_dir->string() + "' does not exist");
    }
  }

  if (options.port == 0) {
    s->port_ = srv.bind_to_any_port(options.host);
    if (s->port_ <= 0) throw mock::PortInUseError("cannot bind any port on " + options.host);
  } else {
    if (!srv.bind_to_port(options.host, options.port)) {
      throw mock::PortInUseError("port " + std::to_string(options.port) + " on " + options.host + " is in use");
    }
    s->port_ = options.port;
  }
  s->thread_ = std::thread([raw = s.get()] { raw->impl_->server.listen_after_bind(); });
  srv.wait_until_ready();
  return s;
}

ReviewServer::~ReviewServer() { stop(); }

std::string ReviewServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

void ReviewServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

void ReviewServer::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace sp::review
