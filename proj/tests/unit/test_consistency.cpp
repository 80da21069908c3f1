#include <doctest.h>

#include <algorithm>
#include <random>

#include "safetypairs/consistency.hpp"
#include "safetypairs/mock_models.hpp"
#include "test_support.hpp"

using namespace sp;
using nlohmann::json;

namespace {

std::shared_ptr<ModelClient> vqa_for(const std::vector<std::pair<std::string, std::string>>& replies) {
  json rules = json::array();
  for (const auto& [q, a] : replies) rules.push_back(test::vqa_rule({{"question", q}}, a));
  auto m = std::make_shared<mock::MockModels>(mock::parse_scenario(json{{"rules", rules}}));
  return test::client(m, test::endpoint("vqa", Role::vqa, 4));
}

const Bytes kImage = test::source_image("edited");

}  // namespace

TEST_CASE("both knife constraints answered as expected pass") {
  auto vqa = vqa_for({{"Is the assailant holding a knife?", "No."}, {"Is the assailant holding a baseball bat?", "Yes."}});
  auto r = check_constraints(kImage,
                             {{"Is the assailant holding a knife?", Answer::no, ConstraintKind::dynamic_fact},
                              {"Is the assailant holding a baseball bat?", Answer::yes, ConstraintKind::dynamic_fact}},
                             *vqa);
  CHECK(r.verdict == VqaVerdict::pass);
  REQUIRE(r.results.size() == 2);
  CHECK(r.results[0].pass);
  CHECK(r.results[1].pass);
  CHECK(r.answers()[0].raw == "No.");
}

TEST_CASE("a changed static fact fails and is flagged") {
  auto vqa = vqa_for({{"Is the flag red?", "No."}, {"Is there a gun?", "No."}});
  auto r = check_constraints(kImage,
                             {{"Is there a gun?", Answer::no, ConstraintKind::dynamic_fact},
                              {"Is the flag red?", Answer::yes, ConstraintKind::static_fact}},
                             *vqa);
  CHECK(r.verdict == VqaVerdict::fail);
  CHECK(r.results[0].pass);
  CHECK_FALSE(r.results[1].pass);
  CHECK(r.results[1].observed == Observed::no);
}

TEST_CASE("an unreadable reply fails without a retry") {
  auto m = std::make_shared<mock::MockModels>(
      mock::parse_scenario(json{{"rules", {test::vqa_rule(json::object(), "unclear")}}}));
  auto vqa = test::client(m, test::endpoint("vqa", Role::vqa));
  auto r = check_constraints(kImage, {{"Is there a gun?", Answer::no, ConstraintKind::dynamic_fact}}, *vqa);
  CHECK(r.verdict == VqaVerdict::fail);
  CHECK(r.results[0].observed == Observed::unparseable);
  CHECK(r.results[0].raw == "unclear");
  CHECK(m->log().size() == 1);
}

TEST_CASE("transport failure propagates instead of a verdict") {
  json rule = test::vqa_rule(json::object(), "Yes.");
  rule["fail"] = {{"status", 500}, {"times", -1}};
  auto m = std::make_shared<mock::MockModels>(mock::parse_scenario(json{{"rules", {rule}}}));
  auto vqa = test::client(m, test::endpoint("vqa", Role::vqa));
  CHECK_THROWS_AS(check_constraints(kImage, {{"Q?", Answer::yes, ConstraintKind::static_fact}}, *vqa), TransportError);
}

TEST_CASE("empty constraint list is a precondition error") {
  auto vqa = vqa_for({});
  CHECK_THROWS_AS(check_constraints(kImage, {}, *vqa), PreconditionError);
}

TEST_CASE("property: verdict ignores order and only improves when an answer is fixed") {
  std::mt19937_64 rng(42);
  for (int round = 0; round < 30; ++round) {
    const int n = 1 + static_cast<int>(rng() % 6);
    std::vector<QAConstraint> cs;
    std::vector<std::pair<std::string, std::string>> replies;
    for (int i = 0; i < n; ++i) {
      const std::string q = "Is fact " + std::to_string(i) + " true?";
      const Answer expected = rng() % 2 ? Answer::yes : Answer::no;
      cs.push_back({q, expected, ConstraintKind::static_fact});
      const int draw = static_cast<int>(rng() % 4);
      replies.emplace_back(q, draw == 0 ? "Yes." : draw == 1 ? "No." : expected == Answer::yes ? "Yes." : "No.");
    }
    auto vqa = vqa_for(replies);
    const auto base = check_constraints(kImage, cs, *vqa);
    const bool oracle = std::all_of(base.results.begin(), base.results.end(), [](const auto& r) { return r.pass; });
    CHECK((base.verdict == VqaVerdict::pass) == oracle);

    auto shuffled = cs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(check_constraints(kImage, shuffled, *vqa).verdict == base.verdict);

    for (int i = 0; i < n; ++i) {
      if (base.results[static_cast<std::size_t>(i)].pass) continue;
      auto fixed = replies;
      fixed[static_cast<std::size_t>(i)].second = cs[static_cast<std::size_t>(i)].expected == Answer::yes ? "Yes." : "No.";
      auto vqa2 = vqa_for(fixed);
      const auto after = check_constraints(kImage, cs, *vqa2);
      int fails_before = 0, fails_after = 0;
      for (const auto& r : base.results) fails_before += !r.pass;
      for (const auto& r : after.results) fails_after += !r.pass;
      CHECK(fails_after == fails_before - 1);
      if (base.verdict == VqaVerdict::pass) CHECK(after.verdict == VqaVerdict::pass);
      break;
    }
  }
}
