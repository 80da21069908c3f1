#include <doctest.h>

#include <httplib.h>

#include "safetypairs/codec.hpp"
#include "safetypairs/mock_models.hpp"
#include "test_support.hpp"

using namespace sp;
using namespace sp::mock;
using nlohmann::json;

namespace {

json req_vqa(const Bytes& img, const std::string& q) {
  return json{{"image_b64", base64_encode(img)}, {"question", q}};
}

}  // namespace

TEST_CASE("exact match rule answers its question") {
  MockModels m(parse_scenario(json{{"rules", {test::vqa_rule({{"question", "Is the child holding a cigarette?"}}, "No.")}}}));
  Response r = m.handle("vqa", req_vqa(test::source_image("s"), "Is the child holding a cigarette?").dump());
  CHECK(r.status == 200);
  CHECK(json::parse(r.body)["text"] == "No.");
  CHECK(m.handle("vqa", req_vqa(test::source_image("s"), "Is the child smiling?").dump()).status == 404);
}

TEST_CASE("failure injection fails the first N matches") {
  json rule = test::chat_rule(json::object(), "ok");
  rule["fail"] = {{"status", 500}, {"times", 2}};
  MockModels m(parse_scenario(json{{"rules", {rule}}}));
  const std::string body = json{{"prompt", "p"}}.dump();
  CHECK(m.handle("chat", body).status == 500);
  CHECK(m.handle("chat", body).status == 500);
  CHECK(m.handle("chat", body).status == 200);
  CHECK(m.handle("chat", body).status == 200);
}

TEST_CASE("seed and substring rules, first match wins") {
  MockModels m(parse_scenario(json{{"rules",
                                    {json{{"route", "edit"},
                                          {"match", {{"instruction", {{"contains", "baseball bat"}}}, {"seed", 2}}},
                                          {"response", {{"image_tag", "<bat:{seed}>"}}}},
                                     json{{"route", "edit"}, {"response", {{"identity", true}}}}}}}));
  const Bytes src = test::source_image("s");
  auto edit = [&](const std::string& instr, int seed) {
    Response r = m.handle("edit", json{{"image_b64", base64_encode(src)}, {"instruction", instr}, {"seed", seed}}.dump());
    REQUIRE(r.status == 200);
    return base64_decode(json::parse(r.body)["image_b64"].get<std::string>());
  };
  CHECK(edit("Replace the knife with a baseball bat.", 2) == tagged_png("<bat:2>"));
  CHECK(edit("Replace the knife with a baseball bat.", 3) == src);
  CHECK(edit("Remove the knife.", 2) == src);
}

TEST_CASE("image matchers see decoded bytes") {
  MockModels m(parse_scenario(json{{"rules", {test::vqa_rule({{"image", {{"contains", "<src:a>"}}}}, "Yes."),
                                              test::vqa_rule(json::object(), "No.")}}}));
  CHECK(json::parse(m.handle("vqa", req_vqa(test::source_image("a"), "Q?").dump()).body)["text"] == "Yes.");
  CHECK(json::parse(m.handle("vqa", req_vqa(test::source_image("b"), "Q?").dump()).body)["text"] == "No.");
}

TEST_CASE("the log records requests in order with image hashes") {
  MockModels m(parse_scenario(json{{"rules", {test::vqa_rule(json::object(), "Yes.")}}}));
  const Bytes img = test::source_image("a");
  m.handle("vqa", req_vqa(img, "Q1?").dump());
  m.handle("chat", json{{"prompt", "x"}}.dump());
  json log = m.log();
  REQUIRE(log.size() == 2);
  CHECK(log[0]["seq"] == 0);
  CHECK(log[0]["rule"] == 0);
  CHECK(log[0]["request"]["image_sha256"] == sha256_hex(img));
  CHECK_FALSE(log[0]["request"].contains("image_b64"));
  CHECK(log[1]["status"] == 404);
  CHECK(log[1]["rule"] == -1);
}

TEST_CASE("scenario validation") {
  CHECK_THROWS_AS(parse_scenario(json{{"rules", {{{"route", "paint"}}}}}), SchemaError);
  CHECK_THROWS_AS(parse_scenario(json{{"rules", {{{"route", "chat"}, {"match", {{"prompt", 5}}}}}}}), SchemaError);
  CHECK_THROWS_AS(parse_scenario(json::object()), SchemaError);
}

TEST_CASE("bearer token is enforced when configured") {
  json s{{"auth_token", "t0k"}, {"rules", {test::chat_rule(json::object(), "ok")}}};
  MockModels m(parse_scenario(s));
  const std::string body = json{{"prompt", "p"}}.dump();
  CHECK(m.handle("chat", body).status == 401);
  CHECK(m.handle("chat", body, std::string("t0k")).status == 200);
}

TEST_CASE("identical request sequences produce identical responses") {
  json s{{"rules", {json{{"route", "embed"}, {"response", {{"hash_vector", 4}}}},
                    json{{"route", "edit"}, {"response", {{"image_tag", "<e:{seed}:{instruction}>"}}}}}}};
  auto run = [&] {
    MockModels m(parse_scenario(s));
    std::vector<std::string> out;
    const Bytes img = test::source_image("x");
    for (int seed = 0; seed < 3; ++seed) {
      out.push_back(m.handle("edit", json{{"image_b64", base64_encode(img)}, {"instruction", "go"}, {"seed", seed}}.dump()).body);
    }
    out.push_back(m.handle("embed", json{{"image_b64", base64_encode(img)}}.dump()).body);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("HTTP server serves the wire schema and its log") {
  auto server = MockServer::serve(parse_scenario(json{{"rules", {test::chat_rule(json::object(), "OK")}}}), 0);
  REQUIRE(server->port() > 0);

  ModelClient c(test::endpoint("chat", Role::instructor), make_http_transport(server->base_url()), [](double) {});
  CHECK(c.chat_complete("Say OK", 0.0, 1) == "OK");

  httplib::Client http("127.0.0.1", server->port());
  auto res = http.Get("/_log");
  REQUIRE(res);
  json log = json::parse(res->body);
  REQUIRE(log.size() == 1);
  CHECK(log[0]["route"] == "chat");

  CHECK_THROWS_AS(MockServer::serve(Scenario{}, server->port()), PortInUseError);
  server->stop();
}
