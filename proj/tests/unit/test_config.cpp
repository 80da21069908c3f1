#include <doctest.h>

#include "safetypairs/config.hpp"
#include "test_support.hpp"

using namespace sp;
using nlohmann::json;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars = std::move(vars)](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

json sample() {
  return json{{"store_root", "data/store"},
              {"endpoints",
               {{{"name", "vqa-main"}, {"role", "vqa"}, {"base_url", "http://127.0.0.1:1"}, {"auth_token", "file-token"}},
                {{"name", "guard"}, {"role", "guard"}, {"base_url", "http://127.0.0.1:2"}, {"max_concurrent", 2}}}},
              {"pipeline", {{"max_trials", 2}, {"edits_per_trial", 3}}},
              {"eval", {{"threshold", 0.7}}},
              {"probe", {{"folds", 5}}}};
}

}  // namespace

TEST_CASE("parse resolves paths and applies defaults") {
  AppConfig c = parse_app_config(sample(), "/etc/sp", env_of({}));
  CHECK(c.store_root == std::filesystem::path("/etc/sp/data/store"));
  CHECK(c.endpoints.size() == 2);
  CHECK(c.endpoint_for(Role::guard).max_concurrent == 2);
  CHECK(c.endpoint_named("vqa-main").auth_token == "file-token");
  CHECK(c.pipeline.max_trials == 2);
  CHECK(c.pipeline.edits_per_trial == 3);
  CHECK(c.pipeline.seed_base == 0);
  CHECK(c.eval.threshold == 0.7);
  CHECK(c.probe.folds == 5);
  CHECK(c.probe.n_values == std::vector<int>{2, 4, 8, 16, 32});

  AppConfig empty = parse_app_config(json::object(), "/x", env_of({}));
  CHECK(empty.store_root == std::filesystem::path("/x/store"));
  CHECK(empty.eval.threshold == 0.5);
}

TEST_CASE("missing roles and names are reported") {
  AppConfig c = parse_app_config(sample(), "/x", env_of({}));
  try {
    (void)c.endpoint_for(Role::editor);
    FAIL("expected PreconditionError");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("'editor'") != std::string::npos);
  }
  CHECK_THROWS_AS(c.endpoint_named("nope"), PreconditionError);
}

TEST_CASE("environment tokens override file tokens") {
  CHECK(token_env_var("vqa-main") == "SAFETYPAIRS_TOKEN_VQA_MAIN");
  AppConfig c = parse_app_config(sample(), "/x", env_of({{"SAFETYPAIRS_TOKEN_VQA_MAIN", "env-token"},
                                                          {"SAFETYPAIRS_TOKEN_GUARD", "g"}}));
  CHECK(c.endpoint_named("vqa-main").auth_token == "env-token");
  CHECK(c.endpoint_named("guard").auth_token == "g");
}

TEST_CASE("invalid configs") {
  json unknown = sample();
  unknown["colour"] = "blue";
  CHECK_THROWS_AS(parse_app_config(unknown, "/x", env_of({})), SchemaError);
  json nested = sample();
  nested["eval"]["mystery"] = 1;
  CHECK_THROWS_AS(parse_app_config(nested, "/x", env_of({})), SchemaError);
  json ep_extra = sample();
  ep_extra["endpoints"][0]["colour"] = "red";
  CHECK_THROWS_AS(parse_app_config(ep_extra, "/x", env_of({})), SchemaError);
  json pipe_extra = sample();
  pipe_extra["pipeline"]["trials"] = 3;
  CHECK_THROWS_AS(parse_app_config(pipe_extra, "/x", env_of({})), SchemaError);
  json dup = sample();
  dup["endpoints"][1]["name"] = "vqa-main";
  CHECK_THROWS_AS(parse_app_config(dup, "/x", env_of({})), SchemaError);
  json bad_trials = sample();
  bad_trials["pipeline"]["max_trials"] = 0;
  CHECK_THROWS_AS(parse_app_config(bad_trials, "/x", env_of({})), SchemaError);
  json missing_policy = sample();
  missing_policy["eval"]["policy_set"] = "nowhere.json";
  CHECK_THROWS_AS(parse_app_config(missing_policy, "/x", env_of({})), NotFoundError);
}

TEST_CASE("hash is stable and ignores tokens") {
  AppConfig a = parse_app_config(sample(), "/x", env_of({}));
  AppConfig b = parse_app_config(sample(), "/x", env_of({{"SAFETYPAIRS_TOKEN_GUARD", "secret"}}));
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 64);
  json changed = sample();
  changed["pipeline"]["max_trials"] = 3;
  CHECK(parse_app_config(changed, "/x", env_of({})).hash() != a.hash());
  CHECK(json(a).dump().find("file-token") == std::string::npos);
}

TEST_CASE("load from file resolves against its directory") {
  test::TempDir dir;
  std::filesystem::create_directories(dir / "cfg");
  write_file_atomic(dir / "cfg/app.json", sample().dump());
  AppConfig c = load_app_config(dir / "cfg/app.json", env_of({}));
  CHECK(c.store_root == dir / "cfg/data/store");
  CHECK_THROWS(load_app_config(dir / "cfg/none.json", env_of({})));
  write_file_atomic(dir / "cfg/bad.json", "{");
  CHECK_THROWS_AS(load_app_config(dir / "cfg/bad.json", env_of({})), SchemaError);
}
