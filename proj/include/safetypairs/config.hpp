#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "safetypairs/gateway.hpp"
#include "safetypairs/pipeline.hpp"
#include "safetypairs/policy.hpp"
#include "safetypairs/probelab.hpp"

namespace sp {

struct EvalConfig {
  double threshold = 0.5;
  std::optional<std::filesystem::path> policy_set;  // bundled policies when unset
  int workers = 4;
};

/// Application config. Precedence, highest first: command-line flags,
/// SAFETYPAIRS_TOKEN_<NAME> environment variables (tokens only), the config
/// file, built-in defaults.
struct AppConfig {
  std::filesystem::path store_root = "store";
  std::vector<EndpointConfig> endpoints;
  pipeline::PipelineConfig pipeline;
  EvalConfig eval;
  probe::SweepConfig probe;

  /// First endpoint with `role`; PreconditionError naming the role if none.
  const EndpointConfig& endpoint_for(Role role) const;
  /// PreconditionError if no endpoint has this name.
  const EndpointConfig& endpoint_named(const std::string& name) const;
  PolicySet policies() const;
  /// SHA-256 of the canonical JSON form. Tokens are excluded.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const AppConfig& c);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Reads the process environment.
EnvLookup process_env();

/// Environment variable holding the bearer token of an endpoint:
/// SAFETYPAIRS_TOKEN_ + name upper-cased, non-alphanumerics as '_'.
std::string token_env_var(const std::string& endpoint_name);

/// Relative paths resolve against `base_dir`. Unknown keys are rejected.
AppConfig parse_app_config(const nlohmann::json& j, const std::filesystem::path& base_dir, const EnvLookup& env);
AppConfig load_app_config(const std::filesystem::path& path, const EnvLookup& env = process_env());

}  // namespace sp
