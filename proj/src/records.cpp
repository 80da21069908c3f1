#include "safetypairs/records.hpp"

#include "safetypairs/codec.hpp"
#include "safetypairs/common.hpp"

namespace sp {

using nlohmann::json;

namespace {

template <typename T>
T req(const json& j, const char* field) {
  if (!j.is_object()) {
    throw SchemaError(field, "record is not a JSON object");
  }
  auto it = j.find(field);
  if (it == j.end()) {
    throw SchemaError(field, std::string("missing field '") + field + "'");
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError(field, std::string("field '") + field + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> opt(const json& j, const char* field) {
  auto it = j.find(field);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw SchemaError(field, std::string("field '") + field + "' has the wrong type");
  }
}

template <typename T>
void put_opt(json& j, const char* field, const std::optional<T>& v) {
  if (v) j[field] = *v;
}

void require_hex_hash(const std::string& h, const char* field) {
  if (h.size() != 64 || h.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw SchemaError(field, std::string("field '") + field + "' is not a lowercase sha256 hex digest");
  }
}

}  // namespace

const char* to_string(Label v) { return v == Label::safe ? "safe" : "unsafe"; }
const char* to_string(Answer v) { return v == Answer::yes ? "yes" : "no"; }
const char* to_string(ConstraintKind v) { return v == ConstraintKind::static_fact ? "static" : "dynamic"; }

const char* to_string(Observed v) {
  switch (v) {
    case Observed::yes: return "yes";
    case Observed::no: return "no";
    case Observed::unparseable: return "unparseable";
  }
  return "?";
}

const char* to_string(VqaVerdict v) {
  switch (v) {
    case VqaVerdict::pending: return "pending";
    case VqaVerdict::pass: return "pass";
    case VqaVerdict::fail: return "fail";
  }
  return "?";
}

const char* to_string(ReviewVerdict v) {
  switch (v) {
    case ReviewVerdict::pending: return "pending";
    case ReviewVerdict::accepted: return "accepted";
    case ReviewVerdict::rejected: return "rejected";
  }
  return "?";
}

const char* to_string(TrialStatus v) { return v == TrialStatus::planned ? "planned" : "plan_failed"; }

namespace {

[[noreturn]] void bad_token(const std::string& field, const std::string& s) {
  throw SchemaError(field, "field '" + field + "' has invalid value \"" + s + "\"");
}

}  // namespace

Label parse_label(const std::string& s, const std::string& field) {
  if (s == "safe") return Label::safe;
  if (s == "unsafe") return Label::unsafe;
  bad_token(field, s);
}

Answer parse_answer(const std::string& s, const std::string& field) {
  if (s == "yes") return Answer::yes;
  if (s == "no") return Answer::no;
  bad_token(field, s);
}

ConstraintKind parse_constraint_kind(const std::string& s, const std::string& field) {
  if (s == "static") return ConstraintKind::static_fact;
  if (s == "dynamic") return ConstraintKind::dynamic_fact;
  bad_token(field, s);
}

Observed parse_observed(const std::string& s, const std::string& field) {
  if (s == "yes") return Observed::yes;
  if (s == "no") return Observed::no;
  if (s == "unparseable") return Observed::unparseable;
  bad_token(field, s);
}

VqaVerdict parse_vqa_verdict(const std::string& s, const std::string& field) {
  if (s == "pending") return VqaVerdict::pending;
  if (s == "pass") return VqaVerdict::pass;
  if (s == "fail") return VqaVerdict::fail;
  bad_token(field, s);
}

ReviewVerdict parse_review_verdict(const std::string& s, const std::string& field) {
  if (s == "pending") return ReviewVerdict::pending;
  if (s == "accepted") return ReviewVerdict::accepted;
  if (s == "rejected") return ReviewVerdict::rejected;
  bad_token(field, s);
}

std::string pair_id_for(const std::string& candidate_id) { return short_id({candidate_id, "pair"}); }

std::string candidate_id_for(const std::string& source_id, int trial_index, std::int64_t seed) {
  return "c-" + short_id({source_id, std::to_string(trial_index), std::to_string(seed)});
}

double YieldStats::vqa_failure_fraction() const {
  if (total.edit_attempts == 0) return 0.0;
  return static_cast<double>(total.edit_attempts - total.vqa_passed) / static_cast<double>(total.edit_attempts);
}

double YieldStats::human_rejection_fraction() const {
  if (total.vqa_passed == 0) return 0.0;
  return static_cast<double>(total.vqa_passed - total.human_accepted) / static_cast<double>(total.vqa_passed);
}

void to_json(json& j, const QAConstraint& v) {
  j = json{{"question", v.question}, {"expected", to_string(v.expected)}, {"kind", to_string(v.kind)}};
}

void from_json(const json& j, QAConstraint& v) {
  v.question = req<std::string>(j, "question");
  if (v.question.empty() || v.question.back() != '?') {
    throw SchemaError("question", "field 'question' must end in '?'");
  }
  v.expected = parse_answer(req<std::string>(j, "expected"), "expected");
  v.kind = parse_constraint_kind(req<std::string>(j, "kind"), "kind");
}

void to_json(json& j, const SourceRecord& v) {
  j = json{{"source_id", v.source_id}, {"image_ref", v.image_ref}, {"image_hash", v.image_hash},
           {"policy_id", v.policy_id}, {"rationale", v.rationale}, {"revision", v.revision}};
  put_opt(j, "caption", v.caption);
}

void from_json(const json& j, SourceRecord& v) {
  v.source_id = req<std::string>(j, "source_id");
  if (v.source_id.empty()) throw SchemaError("source_id", "field 'source_id' is empty");
  v.image_ref = req<std::string>(j, "image_ref");
  v.image_hash = req<std::string>(j, "image_hash");
  require_hex_hash(v.image_hash, "image_hash");
  v.policy_id = req<std::string>(j, "policy_id");
  v.rationale = req<std::string>(j, "rationale");
  v.caption = opt<std::string>(j, "caption");
  v.revision = opt<int>(j, "revision").value_or(1);
}

void to_json(json& j, const VqaAnswer& v) {
  j = json{{"question", v.question}, {"answer", to_string(v.answer)}, {"expected", to_string(v.expected)},
           {"raw", v.raw}};
}

void from_json(const json& j, VqaAnswer& v) {
  v.question = req<std::string>(j, "question");
  v.answer = parse_observed(req<std::string>(j, "answer"), "answer");
  v.expected = parse_answer(req<std::string>(j, "expected"), "expected");
  v.raw = opt<std::string>(j, "raw").value_or("");
}

void to_json(json& j, const CandidateEdit& v) {
  j = json{{"candidate_id", v.candidate_id},
           {"source_id", v.source_id},
           {"trial_index", v.trial_index},
           {"seed", v.seed},
           {"instruction", v.instruction},
           {"constraints", v.constraints},
           {"vqa_verdict", to_string(v.vqa_verdict)},
           {"vqa_answers", v.vqa_answers},
           {"review_verdict", to_string(v.review_verdict)},
           {"template_version", v.template_version},
           {"created_at", v.created_at},
           {"updated_at", v.updated_at},
           {"revision", v.revision}};
  put_opt(j, "edited_image_ref", v.edited_image_ref);
  put_opt(j, "edited_image_hash", v.edited_image_hash);
  put_opt(j, "reviewer", v.reviewer);
  put_opt(j, "note", v.note);
}

void from_json(const json& j, CandidateEdit& v) {
  v.candidate_id = req<std::string>(j, "candidate_id");
  v.source_id = req<std::string>(j, "source_id");
  v.trial_index = req<int>(j, "trial_index");
  if (v.trial_index < 1) throw SchemaError("trial_index", "field 'trial_index' must be >= 1");
  v.seed = req<std::int64_t>(j, "seed");
  v.instruction = req<std::string>(j, "instruction");
  v.constraints = req<std::vector<QAConstraint>>(j, "constraints");
  v.edited_image_ref = opt<std::string>(j, "edited_image_ref");
  v.edited_image_hash = opt<std::string>(j, "edited_image_hash");
  if (v.edited_image_hash) require_hex_hash(*v.edited_image_hash, "edited_image_hash");
  v.vqa_verdict = parse_vqa_verdict(req<std::string>(j, "vqa_verdict"));
  v.vqa_answers = req<std::vector<VqaAnswer>>(j, "vqa_answers");
  v.review_verdict = parse_review_verdict(req<std::string>(j, "review_verdict"));
  v.reviewer = opt<std::string>(j, "reviewer");
  v.note = opt<std::string>(j, "note");
  v.template_version = opt<std::string>(j, "template_version").value_or("");
  v.created_at = opt<std::string>(j, "created_at").value_or("");
  v.updated_at = opt<std::string>(j, "updated_at").value_or("");
  v.revision = opt<int>(j, "revision").value_or(1);

  if (v.vqa_verdict == VqaVerdict::pass) {
    for (const auto& a : v.vqa_answers) {
      if (a.answer != (a.expected == Answer::yes ? Observed::yes : Observed::no)) {
        throw SchemaError("vqa_answers", "vqa_verdict is pass but '" + a.question + "' was not answered as expected");
      }
    }
  }
  if (v.review_verdict != ReviewVerdict::pending && v.vqa_verdict != VqaVerdict::pass) {
    throw SchemaError("review_verdict", "candidate was reviewed without passing the VQA check");
  }
}

void to_json(json& j, const SafetyPair& v) {
  j = json{{"pair_id", v.pair_id},     {"unsafe_ref", v.unsafe_ref}, {"unsafe_hash", v.unsafe_hash},
           {"safe_ref", v.safe_ref},   {"safe_hash", v.safe_hash},   {"policy_id", v.policy_id},
           {"candidate_id", v.candidate_id}, {"rationale", v.rationale}};
}

void from_json(const json& j, SafetyPair& v) {
  v.pair_id = req<std::string>(j, "pair_id");
  v.unsafe_ref = req<std::string>(j, "unsafe_ref");
  v.unsafe_hash = req<std::string>(j, "unsafe_hash");
  v.safe_ref = req<std::string>(j, "safe_ref");
  v.safe_hash = req<std::string>(j, "safe_hash");
  v.policy_id = req<std::string>(j, "policy_id");
  v.candidate_id = req<std::string>(j, "candidate_id");
  v.rationale = req<std::string>(j, "rationale");
  if (v.unsafe_hash == v.safe_hash) {
    throw SchemaError("safe_hash", "pair images are identical");
  }
}

void to_json(json& j, const TrialRecord& v) {
  j = json{{"source_id", v.source_id},
           {"trial_index", v.trial_index},
           {"status", to_string(v.status)},
           {"caption", v.caption},
           {"instruction", v.instruction},
           {"constraints", v.constraints},
           {"warnings", v.warnings},
           {"raw_completion", v.raw_completion},
           {"error", v.error},
           {"instructor_seed", v.instructor_seed},
           {"template_version", v.template_version},
           {"created_at", v.created_at}};
}

void from_json(const json& j, TrialRecord& v) {
  v.source_id = req<std::string>(j, "source_id");
  v.trial_index = req<int>(j, "trial_index");
  std::string status = req<std::string>(j, "status");
  if (status == "planned") {
    v.status = TrialStatus::planned;
  } else if (status == "plan_failed") {
    v.status = TrialStatus::plan_failed;
  } else {
    throw SchemaError("status", "field 'status' has invalid value \"" + status + "\"");
  }
  v.caption = opt<std::string>(j, "caption").value_or("");
  v.instruction = opt<std::string>(j, "instruction").value_or("");
  v.constraints = opt<std::vector<QAConstraint>>(j, "constraints").value_or(std::vector<QAConstraint>{});
  v.warnings = opt<std::vector<std::string>>(j, "warnings").value_or(std::vector<std::string>{});
  v.raw_completion = opt<std::string>(j, "raw_completion").value_or("");
  v.error = opt<std::string>(j, "error").value_or("");
  v.instructor_seed = opt<std::int64_t>(j, "instructor_seed").value_or(0);
  v.template_version = opt<std::string>(j, "template_version").value_or("");
  v.created_at = opt<std::string>(j, "created_at").value_or("");
}

void to_json(json& j, const Funnel& v) {
  j = json{{"edit_attempts", v.edit_attempts},
           {"vqa_passed", v.vqa_passed},
           {"human_accepted", v.human_accepted},
           {"unique_pairs", v.unique_pairs}};
}

void to_json(json& j, const YieldStats& v) {
  j = v.total;
  j["per_policy"] = json::object();
  for (const auto& [id, f] : v.per_policy) {
    j["per_policy"][id] = f;
  }
  j["vqa_failure_fraction"] = v.vqa_failure_fraction();
  j["human_rejection_fraction"] = v.human_rejection_fraction();
}

}  // namespace sp
