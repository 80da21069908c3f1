#include <doctest.h>

#include <httplib.h>

#include "safetypairs/codec.hpp"
#include "safetypairs/review.hpp"
#include "test_support.hpp"

using namespace sp;
using namespace sp::review;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

// Store holding source "a" with three VQA-passing candidates (seeds 0-2)
// and one failing candidate (seed 3).
struct Fixture {
  test::TempDir dir;
  std::unique_ptr<Store> store;
  std::chrono::system_clock::time_point now{std::chrono::seconds(1'000'000)};

  Fixture() {
    auto models = std::make_shared<mock::MockModels>(mock::parse_scenario(test::scenario({test::scripted_source("a", {0, 1, 2})})));
    auto ds = load_source_dataset(test::write_manifest(dir / "data", {{"a"}}));
    store = std::make_unique<Store>(dir / "store");
    pipeline::PipelineConfig cfg;
    cfg.max_trials = 1;
    pipeline::run_pipeline(ds, cfg, test::gateways(models), *store);
  }
  Clock clock() {
    return [this] { return now; };
  }
  std::string failing_id() const { return candidate_id_for("a", 1, 3); }
};

}  // namespace

TEST_CASE("next_items honours limit, order and leases") {
  Fixture f;
  ReviewService svc(*f.store, bundled_policies(), 60s, f.clock());
  SUBCASE("limit") {
    CHECK(svc.next_items("alice", 2).size() == 2);
    CHECK(svc.next_items("carol", 10).size() == 1);
  }
  SUBCASE("order and contents") {
    auto items = svc.next_items("alice", 10);
    REQUIRE(items.size() == 3);
    CHECK(items[0].candidate_id < items[1].candidate_id);
    CHECK(items[0].source_id == "a");
    CHECK(items[0].constraint_report.size() == 2);
    CHECK(items[0].policy_text.find("Should not:") != std::string::npos);
    CHECK(items[0].rationale == test::SourceSpec{}.rationale);
    CHECK(items[0].source_image_hash == sha256_hex(test::source_image("a")));
  }
  SUBCASE("leased items are hidden from others until the lease expires") {
    auto a = svc.next_items("alice", 10);
    CHECK(svc.next_items("bob", 10).empty());
    CHECK(svc.next_items("alice", 10).size() == 3);
    f.now += 61s;
    CHECK(svc.next_items("bob", 10).size() == 3);
  }
  SUBCASE("all reviewed gives an empty batch") {
    for (const auto& it : svc.next_items("alice", 10)) svc.submit_decision(it.candidate_id, ReviewVerdict::rejected, "alice");
    CHECK(svc.next_items("alice", 10).empty());
  }
  SUBCASE("bad limit") { CHECK_THROWS_AS(svc.next_items("alice", 0), PreconditionError); }
}

TEST_CASE("decisions") {
  Fixture f;
  ReviewService svc(*f.store, bundled_policies(), 60s, f.clock());
  const std::string id = svc.next_items("alice", 1).at(0).candidate_id;

  SUBCASE("accept then finalize yields a pair") {
    svc.submit_decision(id, ReviewVerdict::accepted, "alice");
    auto pairs = finalize_pairs(*f.store);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].candidate_id == id);
    CHECK(svc.stats().total == Funnel{4, 3, 1, 1});
  }
  SUBCASE("a rejected candidate stays out until re-decided") {
    svc.submit_decision(id, ReviewVerdict::rejected, "alice");
    CHECK(finalize_pairs(*f.store).empty());
    svc.submit_decision(id, ReviewVerdict::accepted, "bob");
    CHECK(finalize_pairs(*f.store).size() == 1);
  }
  SUBCASE("preconditions") {
    CHECK_THROWS_AS(svc.submit_decision(f.failing_id(), ReviewVerdict::accepted, "alice"), PreconditionError);
    CHECK_THROWS_AS(svc.submit_decision("nope", ReviewVerdict::accepted, "alice"), NotFoundError);
    CHECK_THROWS_AS(svc.submit_decision(id, ReviewVerdict::pending, "alice"), PreconditionError);
    CHECK_THROWS_AS(svc.submit_decision(id, ReviewVerdict::accepted, ""), PreconditionError);
  }
  SUBCASE("repeats are idempotent and conflicts keep history") {
    auto first = svc.submit_decision(id, ReviewVerdict::accepted, "alice");
    auto again = svc.submit_decision(id, ReviewVerdict::accepted, "alice");
    CHECK(again.revision == first.revision);
    CHECK(svc.history(id).size() == 2);
    auto other = svc.submit_decision(id, ReviewVerdict::rejected, "bob", std::string("flag changed"));
    CHECK(other.revision == first.revision + 1);
    auto hist = svc.history(id);
    REQUIRE(hist.size() == 3);
    CHECK(hist[0].review_verdict == ReviewVerdict::pending);
    CHECK(hist[1].review_verdict == ReviewVerdict::accepted);
    CHECK(hist[2].review_verdict == ReviewVerdict::rejected);
    CHECK(hist[2].note == "flag changed");
    CHECK(f.store->find_candidate(id)->review_verdict == ReviewVerdict::rejected);
  }
}

TEST_CASE("review service requires a writable store") {
  Fixture f;
  f.store.reset();
  Store ro(f.dir / "store", StoreMode::read_only);
  CHECK_THROWS_AS(ReviewService{ro}, PreconditionError);
}

TEST_CASE("HTTP API") {
  Fixture f;
  ReviewService svc(*f.store);
  test::TempDir web;
  write_file_atomic(web / "index.html", "<html>review</html>");
  ReviewServer::Options opts;
  opts.static_dir = web.path();
  auto server = ReviewServer::serve(svc, opts);
  httplib::Client http("127.0.0.1", server->port());

  auto next = http.Get("/api/review/next?limit=2&reviewer=alice");
  REQUIRE(next);
  CHECK(next->status == 200);
  json items = json::parse(next->body);
  REQUIRE(items.size() == 2);
  const std::string id = items[0]["candidate_id"];

  auto post = [&](const json& body) { return http.Post("/api/review/decision", body.dump(), "application/json"); };
  auto ok = post({{"candidate_id", id}, {"verdict", "accepted"}, {"reviewer", "alice"}, {"note", "fine"}});
  REQUIRE(ok);
  CHECK(ok->status == 200);
  json decided = json::parse(ok->body);
  CHECK(decided["review_verdict"] == "accepted");
  CHECK(decided["revision"] == 2);

  CHECK(post({{"candidate_id", "missing"}, {"verdict", "accepted"}, {"reviewer", "alice"}})->status == 404);
  CHECK(post({{"candidate_id", f.failing_id()}, {"verdict", "accepted"}, {"reviewer", "alice"}})->status == 409);
  CHECK(post({{"candidate_id", id}, {"verdict", "maybe"}, {"reviewer", "alice"}})->status == 400);
  CHECK(http.Post("/api/review/decision", "{", "application/json")->status == 400);
  CHECK(http.Get("/api/review/next?limit=x")->status == 400);

  auto stats = http.Get("/api/review/stats");
  REQUIRE(stats);
  json st = json::parse(stats->body);
  CHECK(st["human_accepted"] == 1);
  CHECK(st["edit_attempts"] == 4);

  auto hist = http.Get("/api/review/history/" + id);
  REQUIRE(hist);
  CHECK(json::parse(hist->body).size() == 2);
  CHECK(http.Get("/api/review/history/unknown")->status == 404);

  const std::string hash = items[0]["edited_image_hash"];
  auto img = http.Get("/api/image/" + hash);
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(sha256_hex(std::string_view(img->body)) == hash);
  CHECK(http.Get("/api/image/" + std::string(64, '0'))->status == 404);

  auto index = http.Get("/index.html");
  REQUIRE(index);
  CHECK(index->body == "<html>review</html>");
  server->stop();
}

TEST_CASE("bearer token guards the API") {
  Fixture f;
  ReviewService svc(*f.store);
  ReviewServer::Options opts;
  opts.bearer_token = "s3cret";
  auto server = ReviewServer::serve(svc, opts);
  httplib::Client http("127.0.0.1", server->port());
  CHECK(http.Get("/api/review/stats")->status == 401);
  httplib::Headers h{{"Authorization", "Bearer s3cret"}};
  CHECK(http.Get("/api/review/stats", h)->status == 200);
  server->stop();
}
