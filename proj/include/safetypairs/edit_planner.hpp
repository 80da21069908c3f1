#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "safetypairs/policy.hpp"
#include "safetypairs/records.hpp"

namespace sp::planner {

inline constexpr const char* kInstructionTemplateVersion = "instruction_v1";
inline constexpr const char* kCaptionTemplateVersion = "caption_v1";

std::string_view instruction_template();
std::string_view caption_template();

/// An edit instruction and the yes/no facts that must hold after the edit.
struct EditPlan {
  std::string instruction;
  std::vector<QAConstraint> constraints;
  std::string raw_completion;
};

/// Why a completion could not be turned into an EditPlan. `line` is 1-based;
/// 0 when the problem is not tied to one line.
struct PlanParseError {
  std::string message;
  std::size_t line = 0;
};

using PlanResult = std::variant<EditPlan, PlanParseError>;

std::string build_caption_prompt(const SafetyPolicy& policy);

/// Requires non-empty caption and rationale (PreconditionError otherwise).
std::string build_instruction_prompt(std::string_view caption, std::string_view rationale);

/// Reads the "Edit:" line and the "- <question>? Answer: <Yes|No>." bullets
/// that follow "Questions:". Text before "Edit:" is ignored. Never throws.
PlanResult parse_edit_plan(std::string_view completion);

/// Tags a constraint dynamic when its question shares a content word with
/// the instruction, otherwise static.
ConstraintKind classify_constraint(std::string_view question, std::string_view instruction);

std::size_t word_count(std::string_view text);

/// Guideline checks; never rejects a plan.
std::vector<std::string> validate_edit_plan(const EditPlan& plan);

}  // namespace sp::planner
