#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "safetypairs/gateway.hpp"
#include "safetypairs/policy.hpp"
#include "safetypairs/store.hpp"

namespace sp::pipeline {

struct PipelineConfig {
  int max_trials = 3;       // instruction variations per source image
  int edits_per_trial = 4;  // seeded edits launched per instruction
  std::int64_t seed_base = 0;
  double instructor_temperature = 0.7;
  int parallel_images = 1;
  bool stop_on_first_pass = true;
  bool recaption_each_trial = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Seed of the k-th edit (0-based) in a 1-based trial.
std::int64_t edit_seed(const PipelineConfig& cfg, int trial_index, int k);
/// Seed forwarded to the instructor for a trial.
std::int64_t instructor_seed(const PipelineConfig& cfg, int trial_index);

struct Gateways {
  std::shared_ptr<ModelClient> captioner;
  std::shared_ptr<ModelClient> instructor;
  std::shared_ptr<ModelClient> editor;
  std::shared_ptr<ModelClient> vqa;
};

enum class Outcome { succeeded, exhausted, errored };
const char* to_string(Outcome o);

struct ProcessOutcome {
  std::string source_id;
  Outcome outcome = Outcome::exhausted;
  int candidates_written = 0;
  int trials_started = 0;
  bool skipped = false;  // already complete before this run
  std::string error;
};

/// Runs the trial loop for one source record already present in `store`.
/// Trials and candidates found in the store are reused, so calling this
/// again after an interruption continues where the previous call stopped.
ProcessOutcome process_source(const SourceRecord& record, const PipelineConfig& cfg, const Gateways& gateways,
                              Store& store, const PolicySet& policies = bundled_policies());

/// Outcome implied by the store alone, if the record needs no more work.
std::optional<Outcome> completed_outcome(const Store& store, const std::string& source_id, const PipelineConfig& cfg);

struct RunSummary {
  std::vector<ProcessOutcome> outcomes;
  YieldStats stats;
  int succeeded = 0;
  int exhausted = 0;
  int errored = 0;
  int skipped = 0;
  int new_candidates = 0;
};

void to_json(nlohmann::json& j, const RunSummary& s);

/// Imports the dataset's images and records into the store, then processes
/// records on `cfg.parallel_images` workers. Records that are already
/// complete are skipped.
RunSummary run_pipeline(const SourceDataset& dataset, const PipelineConfig& cfg, const Gateways& gateways,
                        Store& store, const PolicySet& policies = bundled_policies());

}  // namespace sp::pipeline
