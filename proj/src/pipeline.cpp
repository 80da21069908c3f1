#include "safetypairs/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <future>
#include <map>
#include <set>
#include <thread>

#include "safetypairs/codec.hpp"
#include "safetypairs/consistency.hpp"
#include "safetypairs/edit_planner.hpp"

using nlohmann::json;

namespace sp::pipeline {

void PipelineConfig::validate() const {
  if (max_trials < 1) throw SchemaError("max_trials", "max_trials must be >= 1");
  if (edits_per_trial < 1) throw SchemaError("edits_per_trial", "edits_per_trial must be >= 1");
  if (parallel_images < 1) throw SchemaError("parallel_images", "parallel_images must be >= 1");
}

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"max_trials", c.max_trials},
           {"edits_per_trial", c.edits_per_trial},
           {"seed_base", c.seed_base},
           {"instructor_temperature", c.instructor_temperature},
           {"parallel_images", c.parallel_images},
           {"stop_on_first_pass", c.stop_on_first_pass},
           {"recaption_each_trial", c.recaption_each_trial}};
}

void from_json(const json& j, PipelineConfig& c) {
  try {
    c.max_trials = j.value("max_trials", c.max_trials);
    c.edits_per_trial = j.value("edits_per_trial", c.edits_per_trial);
    c.seed_base = j.value("seed_base", c.seed_base);
    c.instructor_temperature = j.value("instructor_temperature", c.instructor_temperature);
    c.parallel_images = j.value("parallel_images", c.parallel_images);
    c.stop_on_first_pass = j.value("stop_on_first_pass", c.stop_on_first_pass);
    c.recaption_each_trial = j.value("recaption_each_trial", c.recaption_each_trial);
  } catch (const json::exception& e) {
    throw SchemaError("pipeline", std::string("malformed pipeline config: ") + e.what());
  }
  c.validate();
}

std::int64_t edit_seed(const PipelineConfig& cfg, int trial_index, int k) {
  return cfg.seed_base + static_cast<std::int64_t>(trial_index - 1) * cfg.edits_per_trial + k;
}

std::int64_t instructor_seed(const PipelineConfig& cfg, int trial_index) { return cfg.seed_base + trial_index; }

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::succeeded: return "succeeded";
    case Outcome::exhausted: return "exhausted";
    case Outcome::errored: return "errored";
  }
  return "?";
}

namespace {

std::string template_version() {
  return std::string(planner::kInstructionTemplateVersion) + "+" + planner::kCaptionTemplateVersion;
}

struct RecordState {
  std::map<int, TrialRecord> trials;
  std::map<int, std::set<std::int64_t>> seeds_done;
  std::map<int, bool> trial_passed;
};

RecordState load_state(const Store& store, const std::string& source_id) {
  RecordState st;
  for (auto& t : store.trials_for(source_id)) st.trials.emplace(t.trial_index, std::move(t));
  for (const auto& c : store.candidates_for(source_id)) {
    st.seeds_done[c.trial_index].insert(c.seed);
    if (c.vqa_verdict == VqaVerdict::pass) st.trial_passed[c.trial_index] = true;
  }
  return st;
}

bool trial_complete(const RecordState& st, const PipelineConfig& cfg, int t) {
  auto it = st.trials.find(t);
  if (it == st.trials.end()) return false;
  if (it->second.status == TrialStatus::plan_failed) return true;
  auto s = st.seeds_done.find(t);
  if (s == st.seeds_done.end()) return false;
  for (int k = 0; k < cfg.edits_per_trial; ++k) {
    if (!s->second.count(edit_seed(cfg, t, k))) return false;
  }
  return true;
}

std::optional<Outcome> outcome_from_state(const RecordState& st, const PipelineConfig& cfg) {
  bool any_pass = false;
  for (int t = 1; t <= cfg.max_trials; ++t) {
    if (!trial_complete(st, cfg, t)) return std::nullopt;
    bool passed = st.trial_passed.count(t) > 0;
    any_pass = any_pass || passed;
    if (passed && cfg.stop_on_first_pass) return Outcome::succeeded;
  }
  return any_pass ? Outcome::succeeded : Outcome::exhausted;
}

struct EditResult {
  std::int64_t seed = 0;
  std::optional<CandidateEdit> candidate;
  std::exception_ptr error;
};

}  // namespace

std::optional<Outcome> completed_outcome(const Store& store, const std::string& source_id, const PipelineConfig& cfg) {
  return outcome_from_state(load_state(store, source_id), cfg);
}

ProcessOutcome process_source(const SourceRecord& record, const PipelineConfig& cfg, const Gateways& gw, Store& store,
                              const PolicySet& policies) {
  cfg.validate();
  ProcessOutcome out;
  out.source_id = record.source_id;
  const SafetyPolicy& policy = policies.at(record.policy_id);

  try {
    RecordState st = load_state(store, record.source_id);
    if (auto done = outcome_from_state(st, cfg)) {
      out.outcome = *done;
      out.skipped = true;
      return out;
    }
    const Bytes source_image = read_bytes(store.resolve(record.image_ref));
    std::optional<std::string> caption = store.find_source(record.source_id).value_or(record).caption;

    auto fresh_caption = [&] {
      std::string text =
          trim(gw.captioner->chat_complete(planner::build_caption_prompt(policy), 0.0, std::nullopt, &source_image));
      if (text.empty()) throw ProtocolError("captioner returned an empty caption for '" + record.source_id + "'");
      return text;
    };

    for (int t = 1; t <= cfg.max_trials; ++t) {
      if (trial_complete(st, cfg, t)) {
        if (st.trial_passed.count(t) && cfg.stop_on_first_pass) {
          out.outcome = Outcome::succeeded;
          return out;
        }
        continue;
      }

      TrialRecord trial;
      if (auto it = st.trials.find(t); it != st.trials.end()) {
        trial = it->second;
      } else {
        ++out.trials_started;
        if (cfg.recaption_each_trial) {
          caption = fresh_caption();
        } else if (!caption) {
          caption = fresh_caption();
          SourceRecord updated = store.find_source(record.source_id).value_or(record);
          updated.caption = caption;
          store.put_source(updated);
        }
        trial.source_id = record.source_id;
        trial.trial_index = t;
        trial.caption = *caption;
        trial.instructor_seed = instructor_seed(cfg, t);
        trial.template_version = template_version();
        trial.raw_completion = gw.instructor->chat_complete(planner::build_instruction_prompt(*caption, record.rationale),
                                                            cfg.instructor_temperature, trial.instructor_seed);
        auto parsed = planner::parse_edit_plan(trial.raw_completion);
        if (auto* err = std::get_if<planner::PlanParseError>(&parsed)) {
          trial.status = TrialStatus::plan_failed;
          trial.error = err->message + (err->line ? " (line " + std::to_string(err->line) + ")" : "");
          store.append_trial(trial);
          st.trials.emplace(t, trial);
          continue;
        }
        auto& plan = std::get<planner::EditPlan>(parsed);
        trial.status = TrialStatus::planned;
        trial.instruction = plan.instruction;
        trial.constraints = plan.constraints;
        trial.warnings = planner::validate_edit_plan(plan);
        store.append_trial(trial);
        st.trials.emplace(t, trial);
      }
      if (trial.status == TrialStatus::plan_failed) continue;

      std::vector<std::int64_t> todo;
      for (int k = 0; k < cfg.edits_per_trial; ++k) {
        std::int64_t seed = edit_seed(cfg, t, k);
        if (!st.seeds_done[t].count(seed)) todo.push_back(seed);
      }

      std::vector<std::future<EditResult>> running;
      for (std::int64_t seed : todo) {
        running.push_back(std::async(std::launch::async, [&, seed] {
          EditResult r;
          r.seed = seed;
          try {
            Bytes edited = gw.editor->edit_image(source_image, trial.instruction, seed);
            ConstraintReport report = check_constraints(edited, trial.constraints, *gw.vqa);
            CandidateEdit c;
            c.candidate_id = candidate_id_for(record.source_id, t, seed);
            c.source_id = record.source_id;
            c.trial_index = t;
            c.seed = seed;
            c.instruction = trial.instruction;
            c.constraints = trial.constraints;
            c.edited_image_ref = store.import_image(edited, ImageKind::edited);
            c.edited_image_hash = sha256_hex(edited);
            c.vqa_verdict = report.verdict;
            c.vqa_answers = report.answers();
            c.template_version = trial.template_version;
            r.candidate = std::move(c);
          } catch (...) {
            r.error = std::current_exception();
          }
          return r;
        }));
      }

      std::exception_ptr first_error;
      for (auto& f : running) {
        EditResult r = f.get();
        if (r.candidate) {
          const bool passed = r.candidate->vqa_verdict == VqaVerdict::pass;
          store.append_candidate(std::move(*r.candidate));
          ++out.candidates_written;
          st.seeds_done[t].insert(r.seed);
          if (passed) st.trial_passed[t] = true;
        } else if (!first_error) {
          first_error = r.error;
        }
      }
      if (first_error) std::rethrow_exception(first_error);

      if (st.trial_passed.count(t) && cfg.stop_on_first_pass) {
        out.outcome = Outcome::succeeded;
        return out;
      }
    }
    out.outcome = outcome_from_state(st, cfg).value_or(Outcome::exhausted);
  } catch (const TransportError& e) {
    out.outcome = Outcome::errored;
    out.error = e.what();
  } catch (const PermanentError& e) {
    out.outcome = Outcome::errored;
    out.error = e.what();
  } catch (const ProtocolError& e) {
    out.outcome = Outcome::errored;
    out.error = e.what();
  }
  return out;
}

void to_json(json& j, const RunSummary& s) {
  json outcomes = json::array();
  for (const auto& o : s.outcomes) {
    json e{{"source_id", o.source_id},
           {"outcome", to_string(o.outcome)},
           {"candidates_written", o.candidates_written},
           {"trials_started", o.trials_started},
           {"skipped", o.skipped}};
    if (!o.error.empty()) e["error"] = o.error;
    outcomes.push_back(std::move(e));
  }
  j = json{{"outcomes", outcomes},
           {"counts",
            {{"succeeded", s.succeeded},
             {"exhausted", s.exhausted},
             {"errored", s.errored},
             {"skipped", s.skipped},
             {"new_candidates", s.new_candidates}}},
           {"yield", s.stats}};
}

RunSummary run_pipeline(const SourceDataset& dataset, const PipelineConfig& cfg, const Gateways& gw, Store& store,
                        const PolicySet& policies) {
  cfg.validate();
  if (!store.writable()) {
    throw PreconditionError("run_pipeline needs a store opened for writing");
  }

  std::vector<SourceRecord> records;
  records.reserve(dataset.records.size());
  for (const auto& r : dataset.records) {
    if (auto existing = store.find_source(r.source_id)) {
      if (existing->image_hash != r.image_hash) {
        throw IntegrityError("source '" + r.source_id + "' is already in the store with a different image");
      }
      records.push_back(*existing);
      continue;
    }
    Bytes image = read_bytes(dataset.root / r.image_ref);
    SourceRecord stored = r;
    stored.image_ref = store.import_image(image, ImageKind::unsafe);
    store.put_source(stored);
    records.push_back(*store.find_source(r.source_id));
  }

  RunSummary summary;
  summary.outcomes.resize(records.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr worker_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < records.size(); i = next++) {
      try {
        summary.outcomes[i] = process_source(records[i], cfg, gw, store, policies);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!worker_error) worker_error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.parallel_images),
                                                      std::max<std::size_t>(records.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (worker_error) std::rethrow_exception(worker_error);

  for (const auto& o : summary.outcomes) {
    switch (o.outcome) {
      case Outcome::succeeded: ++summary.succeeded; break;
      case Outcome::exhausted: ++summary.exhausted; break;
      case Outcome::errored: ++summary.errored; break;
    }
    if (o.skipped) ++summary.skipped;
    summary.new_candidates += o.candidates_written;
  }
  summary.stats = compute_yield_stats(store);
  return summary;
}

}  // namespace sp::pipeline
