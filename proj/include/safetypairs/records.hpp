#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace sp {

enum class Label { safe, unsafe };
enum class Answer { yes, no };
enum class ConstraintKind { static_fact, dynamic_fact };
enum class Observed { yes, no, unparseable };
enum class VqaVerdict { pending, pass, fail };
enum class ReviewVerdict { pending, accepted, rejected };

const char* to_string(Label v);
const char* to_string(Answer v);
const char* to_string(ConstraintKind v);
const char* to_string(Observed v);
const char* to_string(VqaVerdict v);
const char* to_string(ReviewVerdict v);

// Parsers throw SchemaError naming `field` on an unknown token.
Label parse_label(const std::string& s, const std::string& field = "label");
Answer parse_answer(const std::string& s, const std::string& field = "expected");
ConstraintKind parse_constraint_kind(const std::string& s, const std::string& field = "kind");
Observed parse_observed(const std::string& s, const std::string& field = "answer");
VqaVerdict parse_vqa_verdict(const std::string& s, const std::string& field = "vqa_verdict");
ReviewVerdict parse_review_verdict(const std::string& s, const std::string& field = "review_verdict");

/// A yes/no fact that must hold in the edited image.
struct QAConstraint {
  std::string question;  // ends in '?'
  Answer expected = Answer::yes;
  ConstraintKind kind = ConstraintKind::static_fact;

  bool operator==(const QAConstraint&) const = default;
};

/// Unsafe source image plus the human explanation of why it violates its policy.
struct SourceRecord {
  std::string source_id;
  std::string image_ref;   // relative to the manifest directory or store root
  std::string image_hash;  // sha256 of the image bytes, lowercase hex
  std::string policy_id;
  std::string rationale;
  std::optional<std::string> caption;
  int revision = 1;

  bool operator==(const SourceRecord&) const = default;
};

struct VqaAnswer {
  std::string question;
  Observed answer = Observed::unparseable;
  Answer expected = Answer::yes;
  std::string raw;

  bool operator==(const VqaAnswer&) const = default;
};

/// One seeded edit attempt and everything that happened to it. Verdict changes
/// are stored as new revisions; the highest revision is current.
struct CandidateEdit {
  std::string candidate_id;
  std::string source_id;
  int trial_index = 1;
  std::int64_t seed = 0;
  std::string instruction;
  std::vector<QAConstraint> constraints;
  std::optional<std::string> edited_image_ref;
  std::optional<std::string> edited_image_hash;
  VqaVerdict vqa_verdict = VqaVerdict::pending;
  std::vector<VqaAnswer> vqa_answers;
  ReviewVerdict review_verdict = ReviewVerdict::pending;
  std::optional<std::string> reviewer;
  std::optional<std::string> note;
  std::string template_version;
  std::string created_at;
  std::string updated_at;
  int revision = 1;

  bool operator==(const CandidateEdit&) const = default;
};

/// Finalized (unsafe, safe) counterfactual pair.
struct SafetyPair {
  std::string pair_id;
  std::string unsafe_ref;
  std::string unsafe_hash;
  std::string safe_ref;
  std::string safe_hash;
  std::string policy_id;
  std::string candidate_id;
  std::string rationale;

  bool operator==(const SafetyPair&) const = default;
};

/// pair_id derived from the candidate it came from.
std::string pair_id_for(const std::string& candidate_id);

/// Deterministic candidate id from its position in the trial schedule.
std::string candidate_id_for(const std::string& source_id, int trial_index, std::int64_t seed);

enum class TrialStatus { planned, plan_failed };
const char* to_string(TrialStatus v);

/// Written before a trial's edits start, so an interrupted trial can be
/// resumed with the same plan. A trial whose plan could not be parsed is
/// recorded as plan_failed and counts as consumed.
struct TrialRecord {
  std::string source_id;
  int trial_index = 1;
  TrialStatus status = TrialStatus::planned;
  std::string caption;
  std::string instruction;
  std::vector<QAConstraint> constraints;
  std::vector<std::string> warnings;
  std::string raw_completion;
  std::string error;
  std::int64_t instructor_seed = 0;
  std::string template_version;
  std::string created_at;

  bool operator==(const TrialRecord&) const = default;
};

struct Funnel {
  std::int64_t edit_attempts = 0;
  std::int64_t vqa_passed = 0;
  std::int64_t human_accepted = 0;
  std::int64_t unique_pairs = 0;

  bool operator==(const Funnel&) const = default;
};

struct YieldStats {
  Funnel total;
  std::map<std::string, Funnel> per_policy;

  /// Share of attempts rejected by the VQA check; 0 when there were no attempts.
  double vqa_failure_fraction() const;
  /// Share of VQA-passing candidates rejected by reviewers; 0 when none passed.
  double human_rejection_fraction() const;

  bool operator==(const YieldStats&) const = default;
};

void to_json(nlohmann::json& j, const QAConstraint& v);
void from_json(const nlohmann::json& j, QAConstraint& v);
void to_json(nlohmann::json& j, const SourceRecord& v);
void from_json(const nlohmann::json& j, SourceRecord& v);
void to_json(nlohmann::json& j, const VqaAnswer& v);
void from_json(const nlohmann::json& j, VqaAnswer& v);
void to_json(nlohmann::json& j, const CandidateEdit& v);
void from_json(const nlohmann::json& j, CandidateEdit& v);
void to_json(nlohmann::json& j, const SafetyPair& v);
void from_json(const nlohmann::json& j, SafetyPair& v);
void to_json(nlohmann::json& j, const TrialRecord& v);
void from_json(const nlohmann::json& j, TrialRecord& v);
void to_json(nlohmann::json& j, const Funnel& v);
void to_json(nlohmann::json& j, const YieldStats& v);

}  // namespace sp
