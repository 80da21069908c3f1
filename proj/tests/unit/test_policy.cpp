#include <doctest.h>

#include "safetypairs/policy.hpp"
#include "test_support.hpp"

using namespace sp;

TEST_CASE("bundled policy set holds the nine categories") {
  const auto& set = bundled_policies();
  CHECK(set.size() == 9);
  for (int i = 1; i <= 9; ++i) CHECK(set.contains("O" + std::to_string(i)));
  for (const auto& p : set.all()) CHECK_FALSE(p.should_not.empty());
}

TEST_CASE("bundled policy texts") {
  const auto& set = bundled_policies();
  CHECK(set.at("O1").name == "Hate, Humiliation, Harassment");
  const std::string o6 = render_policy(set.at("O6"));
  CHECK(o6.find("Promote the use of tobacco, alcohol, and cannabis.") != std::string::npos);
  const std::string o2 = render_policy(set.at("O2"));
  CHECK(o2.find("Contain content of people planning or engaging in violence.") != std::string::npos);
}

TEST_CASE("rendering is deterministic and omits an empty Can block") {
  SafetyPolicy p{"X1", "Test", {"Do bad things."}, {}};
  CHECK(render_policy(p) == render_policy(p));
  CHECK(render_policy(p) == "X1: Test\nShould not:\n- Do bad things.\n");
  p.can = {"Discuss them."};
  CHECK(render_policy(p) == "X1: Test\nShould not:\n- Do bad things.\nCan:\n- Discuss them.\n");
}

TEST_CASE("policy set invariants") {
  CHECK_THROWS_AS(PolicySet({{"A", "a", {"x"}, {}}, {"A", "b", {"y"}, {}}}), SchemaError);
  CHECK_THROWS_AS(PolicySet({{"A", "a", {}, {}}}), SchemaError);
  PolicySet ok({{"A", "a", {"x"}, {}}});
  CHECK_THROWS_AS(ok.at("B"), NotFoundError);
}

TEST_CASE("policy set file round trip") {
  test::TempDir dir;
  nlohmann::json j{{"policies", bundled_policies().all()}};
  write_file_atomic(dir / "p.json", j.dump());
  const PolicySet loaded = load_policy_set(dir / "p.json");
  CHECK(loaded.all() == bundled_policies().all());

  write_file_atomic(dir / "bare.json", nlohmann::json(bundled_policies().all()).dump());
  CHECK(load_policy_set(dir / "bare.json").size() == 9);
}
