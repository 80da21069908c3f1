#pragma once

#include <vector>

#include "safetypairs/gateway.hpp"
#include "safetypairs/records.hpp"

namespace sp {

struct ConstraintResult {
  std::string question;
  Answer expected = Answer::yes;
  Observed observed = Observed::unparseable;
  std::string raw;
  bool pass = false;
};

struct ConstraintReport {
  std::vector<ConstraintResult> results;  // same order as the input constraints
  VqaVerdict verdict = VqaVerdict::fail;

  std::vector<VqaAnswer> answers() const;
};

/// Asks every question about `image` (all of them, concurrently, bounded by
/// the endpoint limiter) and passes only when each answer matches its
/// expectation. An unparseable reply counts as a failed constraint. Transport
/// failures propagate; no verdict is produced for them.
ConstraintReport check_constraints(const Bytes& image, const std::vector<QAConstraint>& constraints, ModelClient& vqa);

}  // namespace sp
