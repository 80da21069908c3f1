#include <doctest.h>

#include <algorithm>
#include <set>
#include <thread>

#include "safetypairs/codec.hpp"
#include "safetypairs/gateway.hpp"
#include "safetypairs/mock_models.hpp"
#include "test_support.hpp"

using namespace sp;
using nlohmann::json;

namespace {

std::shared_ptr<mock::MockModels> models(const json& rules) {
  return std::make_shared<mock::MockModels>(mock::parse_scenario(json{{"rules", rules}}));
}

// Counts calls and records sleeps without sleeping.
struct Recorder {
  std::vector<double> sleeps;
};

}  // namespace

TEST_CASE("chat round trip") {
  auto m = models(json::array({test::chat_rule({{"prompt", {{"contains", "OK"}}}}, "OK")}));
  auto c = test::client(m, test::endpoint("chat", Role::instructor));
  CHECK(c->chat_complete("Say OK", 0.0, 1) == "OK");
  CHECK(c->total_attempts() == 1);
}

TEST_CASE("transient failures are retried with exponential backoff") {
  json rule = test::chat_rule(json::object(), "fine");
  rule["fail"] = {{"status", 500}, {"times", 2}};
  auto m = models(json::array({rule}));
  auto rec = std::make_shared<Recorder>();
  ModelClient c(test::endpoint("chat", Role::instructor), mock::make_in_process_transport(m),
                [rec](double s) { rec->sleeps.push_back(s); }, 3);
  CHECK(c.chat_complete("hi", 0.0, std::nullopt) == "fine");
  CHECK(c.total_attempts() == 3);
  REQUIRE(rec->sleeps.size() == 2);
  CHECK(c.backoff_history() == rec->sleeps);
  const double base = c.config().retry.base_backoff;
  for (std::size_t k = 0; k < 2; ++k) {
    const double nominal = base * static_cast<double>(1u << k);
    CHECK(rec->sleeps[k] >= nominal * 0.8);
    CHECK(rec->sleeps[k] <= nominal * 1.2);
  }
}

TEST_CASE("retries are exhausted into a TransportError listing every attempt") {
  json rule = test::chat_rule(json::object(), "never");
  rule["fail"] = {{"status", 503}, {"times", -1}};
  auto c = test::client(models(json::array({rule})), test::endpoint("chat", Role::instructor));
  try {
    c->chat_complete("hi", 0.0, std::nullopt);
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.attempts().size() == 3);
  }
  CHECK(c->total_attempts() == 3);
}

TEST_CASE("client errors are permanent and not retried") {
  json rule = test::chat_rule(json::object(), "x");
  rule["status"] = 401;
  auto c = test::client(models(json::array({rule})), test::endpoint("chat", Role::instructor));
  try {
    c->chat_complete("hi", 0.0, std::nullopt);
    FAIL("expected PermanentError");
  } catch (const PermanentError& e) {
    CHECK(e.status() == 401);
  }
  CHECK(c->total_attempts() == 1);
}

TEST_CASE("429 counts as transient") {
  json rule = test::chat_rule(json::object(), "ok");
  rule["fail"] = {{"status", 429}, {"times", 1}};
  auto c = test::client(models(json::array({rule})), test::endpoint("chat", Role::instructor));
  CHECK(c->chat_complete("hi", 0.0, std::nullopt) == "ok");
  CHECK(c->total_attempts() == 2);
}

TEST_CASE("edit_image") {
  auto m = models(json::array({json{{"route", "edit"}, {"match", {{"instruction", "same"}}}, {"response", {{"identity", true}}}},
                               json{{"route", "edit"}, {"response", {{"image_tag", "<e:{seed}>"}}}}}));
  auto c = test::client(m, test::endpoint("edit", Role::editor));
  const Bytes src = test::source_image("s1");
  SUBCASE("identity editor echoes the input") { CHECK(c->edit_image(src, "same", 0) == src); }
  SUBCASE("distinct seeds give distinct images") {
    std::set<std::string> hashes;
    for (int seed : {1, 2, 3, 4}) hashes.insert(sha256_hex(c->edit_image(src, "Replace the knife.", seed)));
    CHECK(hashes.size() == 4);
    CHECK(c->edit_image(src, "Replace the knife.", 2) == c->edit_image(src, "Replace the knife.", 2));
  }
  SUBCASE("empty instruction is rejected without a request") {
    CHECK_THROWS_AS(c->edit_image(src, "   ", 0), PreconditionError);
    CHECK(c->total_attempts() == 0);
    CHECK(m->log().empty());
  }
  SUBCASE("non-image input is rejected") { CHECK_THROWS_AS(c->edit_image(Bytes{1, 2, 3}, "x", 0), PreconditionError); }
}

TEST_CASE("edit replies that are not images are protocol errors") {
  auto m = models(json::array({json{{"route", "edit"}, {"response", {{"image_b64", base64_encode(Bytes{'h', 'i'})}}}}}));
  auto c = test::client(m, test::endpoint("edit", Role::editor));
  CHECK_THROWS_AS(c->edit_image(test::source_image("s"), "x", 0), ProtocolError);
}

TEST_CASE("parse_yes_no") {
  CHECK(parse_yes_no("Yes.") == Answer::yes);
  CHECK(parse_yes_no("  yes") == Answer::yes);
  CHECK(parse_yes_no("No, the flag is red.") == Answer::no);
  CHECK(parse_yes_no("NO!") == Answer::no);
  CHECK_FALSE(parse_yes_no("It is unclear.").has_value());
  CHECK_FALSE(parse_yes_no("").has_value());
  CHECK_FALSE(parse_yes_no("Yesterday").has_value());
}

TEST_CASE("vqa_answer") {
  auto m = models(json::array({test::vqa_rule({{"question", "Is there a knife?"}}, "Yes."),
                               test::vqa_rule({{"question", "Is the flag blue?"}}, "No, the flag is red."),
                               test::vqa_rule(json::object(), "It is unclear.")}));
  auto c = test::client(m, test::endpoint("vqa", Role::vqa));
  const Bytes img = test::source_image("s");
  CHECK(c->vqa_answer(img, "Is there a knife?").answer == Answer::yes);
  auto r = c->vqa_answer(img, "Is the flag blue?");
  CHECK(r.answer == Answer::no);
  CHECK(r.raw == "No, the flag is red.");
  try {
    c->vqa_answer(img, "Is it raining?");
    FAIL("expected VqaParseError");
  } catch (const VqaParseError& e) {
    CHECK(e.raw() == "It is unclear.");
  }
}

TEST_CASE("guard logits") {
  auto m = models(json::array({json{{"route", "guard"}, {"match", {{"prompt", "full"}}}, {"response", {{"logit_yes", 2.0}, {"logit_no", 0.0}}}},
                               json{{"route", "guard"}, {"response", {{"logit_yes", 1.0}}}}}));
  auto c = test::client(m, test::endpoint("guard", Role::guard));
  const Bytes img = test::source_image("s");
  CHECK(c->guard_logits(img, "full") == GuardLogits{2.0, 0.0});
  CHECK_THROWS_AS(c->guard_logits(img, "partial"), CapabilityError);

  auto cfg = test::endpoint("text-guard", Role::guard);
  cfg.logits = false;
  auto t = test::client(m, cfg);
  CHECK_THROWS_AS(t->guard_logits(img, "full"), CapabilityError);
}

TEST_CASE("roles gate operations") {
  auto m = models(json::array());
  auto c = test::client(m, test::endpoint("vqa", Role::vqa));
  CHECK_THROWS_AS(c->edit_image(test::source_image("s"), "x", 0), PreconditionError);
  CHECK_THROWS_AS(c->embed_image(test::source_image("s")), PreconditionError);
}

TEST_CASE("max_concurrent=1 serializes requests") {
  json rule = test::chat_rule(json::object(), "ok");
  rule["delay_ms"] = 15;
  auto m = models(json::array({rule}));
  auto c = test::client(m, test::endpoint("chat", Role::instructor, 1));
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&] { c->chat_complete("hi", 0.0, std::nullopt); });
  for (auto& t : threads) t.join();
  json log = m->log();
  REQUIRE(log.size() == 4);
  std::vector<std::pair<std::int64_t, std::int64_t>> spans;
  for (const auto& e : log) spans.emplace_back(e["received_us"].get<std::int64_t>(), e["responded_us"].get<std::int64_t>());
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) CHECK(spans[i].first >= spans[i - 1].second);
}

TEST_CASE("FifoLimiter bounds in-flight permits") {
  FifoLimiter l(2);
  l.acquire();
  l.acquire();
  CHECK(l.in_flight() == 2);
  std::atomic<bool> got{false};
  std::thread t([&] {
    FifoLimiter::Permit p(l);
    got = true;
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  CHECK_FALSE(got.load());
  l.release();
  t.join();
  CHECK(got.load());
  l.release();
  CHECK(l.in_flight() == 0);
}

TEST_CASE("embed_image") {
  auto m = models(json::array({json{{"route", "embed"}, {"match", {{"image", {{"contains", "<src:a>"}}}}}, {"response", {{"vector", {1, 0, 0}}}}},
                               json{{"route", "embed"}, {"match", {{"image", {{"contains", "<src:b>"}}}}}, {"response", {{"vector", {1, 0}}}}},
                               json{{"route", "embed"}, {"response", {{"hash_vector", 8}}}}}));
  auto c = test::client(m, test::endpoint("emb", Role::embedder));
  CHECK(c->embed_image(test::source_image("a")) == std::vector<double>{1, 0, 0});
  CHECK_THROWS_AS(c->embed_image(test::source_image("b")), DimensionError);

  auto h = test::client(m, test::endpoint("emb2", Role::embedder));
  auto v1 = h->embed_image(test::source_image("c"));
  CHECK(v1.size() == 8);
  CHECK(h->embed_image(test::source_image("c")) == v1);
  CHECK(h->embed_image(test::source_image("d")) != v1);
}

TEST_CASE("endpoint config validation and serialization") {
  EndpointConfig c = test::endpoint("x", Role::guard);
  c.auth_token = "secret";
  json j = c;
  CHECK_FALSE(j.contains("auth_token"));
  EndpointConfig back = j.get<EndpointConfig>();
  CHECK(back.name == "x");
  CHECK(back.role == Role::guard);
  c.max_concurrent = 0;
  CHECK_THROWS_AS(c.validate(), SchemaError);
  CHECK_THROWS(parse_role("painter"));
}
