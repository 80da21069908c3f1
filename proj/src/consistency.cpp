#include "safetypairs/consistency.hpp"

#include <future>

namespace sp {

std::vector<VqaAnswer> ConstraintReport::answers() const {
  std::vector<VqaAnswer> out;
  out.reserve(results.size());
  for (const auto& r : results) {
    out.push_back(VqaAnswer{r.question, r.observed, r.expected, r.raw});
  }
  return out;
}

ConstraintReport check_constraints(const Bytes& image, const std::vector<QAConstraint>& constraints, ModelClient& vqa) {
  if (constraints.empty()) {
    throw PreconditionError("check_constraints needs at least one constraint");
  }

  std::vector<std::future<ConstraintResult>> pending;
  pending.reserve(constraints.size());
  for (const auto& c : constraints) {
    pending.push_back(std::async(std::launch::async, [&image, &vqa, c] {
      ConstraintResult r;
      r.question = c.question;
      r.expected = c.expected;
      try {
        VqaReply reply = vqa.vqa_answer(image, c.question);
        r.observed = reply.answer == Answer::yes ? Observed::yes : Observed::no;
        r.raw = std::move(reply.raw);
      } catch (const VqaParseError& e) {
        r.observed = Observed::unparseable;
        r.raw = e.raw();
      }
      r.pass = r.observed == (c.expected == Answer::yes ? Observed::yes : Observed::no);
      return r;
    }));
  }

  // Collect every future before rethrowing so no task outlives `image`.
  ConstraintReport report;
  std::exception_ptr first_error;
  for (auto& f : pending) {
    try {
      report.results.push_back(f.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  bool all = true;
  for (const auto& r : report.results) all = all && r.pass;
  report.verdict = all ? VqaVerdict::pass : VqaVerdict::fail;
  return report;
}

}  // namespace sp
