#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace sp {

/// A written safety category: what content the category prohibits and what
/// it explicitly permits.
struct SafetyPolicy {
  std::string id;  // category code, e.g. "O1"
  std::string name;
  std::vector<std::string> should_not;
  std::vector<std::string> can;

  bool operator==(const SafetyPolicy&) const = default;
};

/// Deterministic text form used inside prompts:
///
///   O2: Violence, Harm, or Cruelty
///   Should not:
///   - ...
///   Can:
///   - ...
///
/// The "Can:" block is omitted when `can` is empty.
std::string render_policy(const SafetyPolicy& policy);

/// A set of policies with unique ids, in insertion order.
class PolicySet {
 public:
  PolicySet() = default;
  explicit PolicySet(std::vector<SafetyPolicy> policies);

  const SafetyPolicy& at(const std::string& id) const;
  bool contains(const std::string& id) const;
  const std::vector<SafetyPolicy>& all() const { return policies_; }
  std::size_t size() const { return policies_.size(); }

 private:
  std::vector<SafetyPolicy> policies_;
};

/// The nine-category taxonomy (O1-O9) bundled with the tool.
const PolicySet& bundled_policies();

/// Loads `{"policies": [{id, name, should_not, can}, ...]}` or a bare array.
PolicySet load_policy_set(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const SafetyPolicy& p);
void from_json(const nlohmann::json& j, SafetyPolicy& p);

}  // namespace sp
