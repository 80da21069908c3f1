#include "safetypairs/config.hpp"

#include <cctype>
#include <cstdlib>
#include <set>

#include "safetypairs/codec.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace sp {

const EndpointConfig& AppConfig::endpoint_for(Role role) const {
  for (const auto& e : endpoints) {
    if (e.role == role) return e;
  }
  throw PreconditionError(std::string("no endpoint with role '") + to_string(role) + "' is configured");
}

const EndpointConfig& AppConfig::endpoint_named(const std::string& name) const {
  for (const auto& e : endpoints) {
    if (e.name == name) return e;
  }
  throw PreconditionError("no endpoint named '" + name + "' is configured");
}

PolicySet AppConfig::policies() const {
  return eval.policy_set ? load_policy_set(*eval.policy_set) : bundled_policies();
}

void to_json(json& j, const AppConfig& c) {
  json probe = c.probe;
  probe.erase("seed");
  probe["workers"] = c.probe.workers;
  j = json{{"store_root", c.store_root.string()},
           {"endpoints", c.endpoints},
           {"pipeline", c.pipeline},
           {"eval",
            {{"threshold", c.eval.threshold},
             {"policy_set", c.eval.policy_set ? json(c.eval.policy_set->string()) : json(nullptr)},
             {"workers", c.eval.workers}}},
           {"probe", std::move(probe)}};
}

std::string AppConfig::hash() const { return sha256_hex(json(*this).dump()); }

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) return std::string(v);
    return std::nullopt;
  };
}

std::string token_env_var(const std::string& endpoint_name) {
  std::string out = "SAFETYPAIRS_TOKEN_";
  for (char c : endpoint_name) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                                                              : '_');
  }
  return out;
}

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw SchemaError(where, "must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw SchemaError(where.empty() ? key : where + "." + key, "unknown config key");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

AppConfig parse_app_config(const json& j, const fs::path& base_dir, const EnvLookup& env) {
  reject_unknown(j, "", {"store_root", "endpoints", "pipeline", "eval", "probe"});
  AppConfig c;
  try {
    if (j.contains("store_root")) c.store_root = resolve(base_dir, j["store_root"].get<std::string>());
    else c.store_root = base_dir / c.store_root;

    std::set<std::string> names;
    for (const auto& e : j.value("endpoints", json::array())) {
      reject_unknown(e, "endpoints",
                     {"name", "role", "base_url", "auth_token", "max_concurrent", "timeout", "retry", "logits"});
      if (e.contains("retry")) reject_unknown(e["retry"], "endpoints.retry", {"max_attempts", "base_backoff"});
      auto ep = e.get<EndpointConfig>();
      if (!names.insert(ep.name).second) throw SchemaError("endpoints", "duplicate endpoint name '" + ep.name + "'");
      if (env) {
        if (auto tok = env(token_env_var(ep.name))) ep.auth_token = *tok;
      }
      c.endpoints.push_back(std::move(ep));
    }

    if (j.contains("pipeline")) {
      reject_unknown(j["pipeline"], "pipeline",
                     {"max_trials", "edits_per_trial", "seed_base", "instructor_temperature", "parallel_images",
                      "stop_on_first_pass", "recaption_each_trial"});
    }
    if (j.contains("pipeline")) c.pipeline = j["pipeline"].get<pipeline::PipelineConfig>();

    if (j.contains("eval")) {
      const json& e = j["eval"];
      reject_unknown(e, "eval", {"threshold", "policy_set", "workers"});
      c.eval.threshold = e.value("threshold", c.eval.threshold);
      if (!(c.eval.threshold >= 0 && c.eval.threshold <= 1)) throw SchemaError("eval.threshold", "must be in [0, 1]");
      c.eval.workers = e.value("workers", c.eval.workers);
      if (c.eval.workers < 1) throw SchemaError("eval.workers", "must be >= 1");
      if (e.contains("policy_set") && !e["policy_set"].is_null()) {
        c.eval.policy_set = resolve(base_dir, e["policy_set"].get<std::string>());
        if (!fs::exists(*c.eval.policy_set)) {
          throw NotFoundError("policy set '" + c.eval.policy_set->string() + "' does not exist");
        }
      }
    }

    if (j.contains("probe")) {
      reject_unknown(j["probe"], "probe", {"n_values", "folds", "hyper", "workers"});
      c.probe = j["probe"].get<probe::SweepConfig>();
    }
  } catch (const json::exception& e) {
    throw SchemaError("config", std::string("malformed config: ") + e.what());
  }
  return c;
}

AppConfig load_app_config(const fs::path& path, const EnvLookup& env) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError("config", path.string() + ": " + e.what());
  }
  return parse_app_config(j, path.has_parent_path() ? path.parent_path() : fs::path("."), env);
}

}  // namespace sp
