#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "safetypairs/gateway.hpp"
#include "safetypairs/mock_models.hpp"
#include "safetypairs/pipeline.hpp"
#include "safetypairs/records.hpp"

namespace sp::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

struct SourceSpec {
  std::string source_id;
  std::string policy_id = "O2";
  std::string rationale = "This image is harmful because it shows a weapon.";
};

/// Image bytes used for a source; its PNG tag is "<src:ID>".
Bytes source_image(const std::string& source_id);

/// Writes images and a manifest.jsonl under `dir`; returns the manifest path.
std::filesystem::path write_manifest(const std::filesystem::path& dir, const std::vector<SourceSpec>& sources);

/// Endpoint config with the given role and a no-op base URL.
EndpointConfig endpoint(const std::string& name, Role role, int max_concurrent = 4, int max_attempts = 3);

/// Client wired to `models` in-process; backoff sleeps are skipped.
std::shared_ptr<ModelClient> client(std::shared_ptr<mock::MockModels> models, EndpointConfig cfg);

/// All four pipeline roles served by one scripted mock.
pipeline::Gateways gateways(std::shared_ptr<mock::MockModels> models);

/// Rule helpers for scenario JSON.
nlohmann::json chat_rule(const nlohmann::json& match, const std::string& text);
nlohmann::json edit_rule(const nlohmann::json& match, const std::string& tag);
nlohmann::json vqa_rule(const nlohmann::json& match, const std::string& text);

/// Rules scripting one source through the pipeline. The caption is
/// "Caption of ID."; every plan asks "Is there a knife?" (expect No) and
/// "Is there a bat?" (expect Yes); edits are tagged "<edit:ID:SEED>" and pass
/// the VQA check only for `passing_seeds`. Instructor calls whose seed is in
/// `bad_plan_seeds` get an unparseable reply.
nlohmann::json scripted_source(const std::string& id, const std::set<std::int64_t>& passing_seeds,
                               const std::set<std::int64_t>& bad_plan_seeds = {});

/// Concatenates rule arrays into a scenario object.
nlohmann::json scenario(const std::vector<nlohmann::json>& rule_sets);

/// Completion in the instruction template's answer format.
std::string plan_text(const std::string& instruction, const std::vector<std::pair<std::string, bool>>& questions);

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs `argv` with extra environment variables, capturing stdout/stderr.
ProcessResult run_process(const std::vector<std::string>& argv, const std::map<std::string, std::string>& env = {});

}  // namespace sp::test
