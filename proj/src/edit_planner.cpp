#include "safetypairs/edit_planner.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "safetypairs/common.hpp"
#include "safetypairs/prompt_assets.hpp"

namespace sp::planner {

namespace {

constexpr std::size_t kMaxConstraints = 10;

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) {
      return false;
    }
  }
  return true;
}

std::size_t rfind_ci(std::string_view s, std::string_view needle) {
  std::string ls = to_lower(s);
  return ls.rfind(to_lower(needle));
}

bool is_bullet(std::string_view line) {
  return !line.empty() && (line.front() == '-' || line.front() == '*');
}

// Sentence terminator followed by whitespace and then more text.
bool has_interior_sentence_break(std::string_view s) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if ((s[i] == '.' || s[i] == '!' || s[i] == '?') && std::isspace(static_cast<unsigned char>(s[i + 1]))) {
      std::size_t j = i + 1;
      while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
      if (j < s.size()) return true;
    }
  }
  return false;
}

std::string replace_once(std::string_view tmpl, std::string_view placeholder, std::string_view value) {
  std::size_t at = tmpl.find(placeholder);
  if (at == std::string_view::npos) {
    throw Error("prompt template lacks placeholder " + std::string(placeholder));
  }
  std::string out(tmpl.substr(0, at));
  out.append(value);
  out.append(tmpl.substr(at + placeholder.size()));
  return out;
}

const std::set<std::string>& stopwords() {
  static const std::set<std::string> kWords = {
      "the",   "and",   "are",   "was",   "were",  "does",    "did",    "there", "this",  "that",  "these",
      "those", "image", "photo", "picture", "any", "its",    "has",    "have",  "for",   "from",  "with",
      "into",  "onto",  "his",   "her",   "their", "they",   "them",   "she",   "him",   "someone", "something",
      "still", "now",   "visible", "shown", "show", "appear", "appears", "not", "out",   "all",   "some",
      "make",  "made",  "change", "replace", "remove", "add",  "edit",   "turn",  "put",   "instead", "being",
      "one",   "other", "more",  "less",  "what",  "which",  "who",    "whom",  "where", "can",   "should"};
  return kWords;
}

std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.size() >= 3 && !stopwords().count(word)) {
      if (word.size() > 3 && word.back() == 's') word.pop_back();
      out.insert(word);
    }
    word.clear();
  };
  for (char c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

}  // namespace

std::string_view instruction_template() { return assets::kInstructionV1; }
std::string_view caption_template() { return assets::kCaptionV1; }

std::string build_caption_prompt(const SafetyPolicy& policy) {
  std::string rendered = render_policy(policy);
  if (!rendered.empty() && rendered.back() == '\n') rendered.pop_back();
  return replace_once(caption_template(), "{policy}", rendered);
}

std::string build_instruction_prompt(std::string_view caption, std::string_view rationale) {
  if (trim(caption).empty()) throw PreconditionError("caption is empty");
  if (trim(rationale).empty()) throw PreconditionError("rationale is empty");
  std::string_view tmpl = instruction_template();
  const std::size_t c_at = tmpl.find("{caption}");
  const std::size_t r_at = tmpl.find("{rationale}");
  if (c_at == std::string_view::npos || r_at == std::string_view::npos || c_at > r_at) {
    throw Error("instruction template placeholders are missing or out of order");
  }
  // Substitute by position so that placeholder-like text inside the inputs is
  // left alone.
  std::string out(tmpl.substr(0, c_at));
  out.append(caption);
  out.append(tmpl.substr(c_at + 9, r_at - (c_at + 9)));
  out.append(rationale);
  out.append(tmpl.substr(r_at + 11));
  return out;
}

ConstraintKind classify_constraint(std::string_view question, std::string_view instruction) {
  auto q = content_words(question);
  auto e = content_words(instruction);
  for (const auto& w : q) {
    if (e.count(w)) return ConstraintKind::dynamic_fact;
  }
  return ConstraintKind::static_fact;
}

std::size_t word_count(std::string_view text) {
  std::istringstream ss{std::string(text)};
  std::size_t n = 0;
  std::string w;
  while (ss >> w) ++n;
  return n;
}

PlanResult parse_edit_plan(std::string_view completion) {
  const auto lines = split_lines(completion);

  std::size_t edit_line = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (starts_with_ci(trim(lines[i]), "edit:")) {
      edit_line = i;
      break;
    }
  }
  if (edit_line == lines.size()) {
    return PlanParseError{"completion has no \"Edit:\" line", 0};
  }

  EditPlan plan;
  plan.raw_completion = std::string(completion);
  plan.instruction = trim(trim(lines[edit_line]).substr(5));
  std::size_t cursor = edit_line + 1;
  if (plan.instruction.empty()) {
    while (cursor < lines.size() && trim(lines[cursor]).empty()) ++cursor;
    if (cursor < lines.size() && !starts_with_ci(trim(lines[cursor]), "questions:")) {
      plan.instruction = trim(lines[cursor]);
      ++cursor;
    }
  }
  if (plan.instruction.empty()) {
    return PlanParseError{"\"Edit:\" is not followed by an instruction", edit_line + 1};
  }
  if (has_interior_sentence_break(plan.instruction)) {
    return PlanParseError{"edit instruction must be a single sentence", edit_line + 1};
  }

  std::size_t q_line = lines.size();
  for (std::size_t i = cursor; i < lines.size(); ++i) {
    if (starts_with_ci(trim(lines[i]), "questions:")) {
      q_line = i;
      break;
    }
  }
  if (q_line == lines.size()) {
    return PlanParseError{"completion has no \"Questions:\" section", 0};
  }

  for (std::size_t i = q_line + 1; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    const std::size_t line_no = i + 1;
    if (line.empty()) continue;
    if (!is_bullet(line)) break;
    const std::string body = trim(std::string_view(line).substr(1));
    const std::size_t ans_at = rfind_ci(body, "answer:");
    if (ans_at == std::string::npos) {
      return PlanParseError{"question line lacks \"Answer:\": " + line, line_no};
    }
    QAConstraint c;
    c.question = trim(std::string_view(body).substr(0, ans_at));
    if (c.question.empty() || c.question.back() != '?') {
      return PlanParseError{"question does not end in '?': " + line, line_no};
    }
    std::string token = to_lower(trim(std::string_view(body).substr(ans_at + 7)));
    while (!token.empty() && std::ispunct(static_cast<unsigned char>(token.back()))) token.pop_back();
    if (token == "yes") {
      c.expected = Answer::yes;
    } else if (token == "no") {
      c.expected = Answer::no;
    } else {
      return PlanParseError{"answer \"" + token + "\" is not Yes or No: " + line, line_no};
    }
    c.kind = classify_constraint(c.question, plan.instruction);
    plan.constraints.push_back(std::move(c));
  }

  if (plan.constraints.empty()) {
    return PlanParseError{"no parsable questions under \"Questions:\"", q_line + 1};
  }
  if (plan.constraints.size() > kMaxConstraints) {
    return PlanParseError{"plan has " + std::to_string(plan.constraints.size()) + " questions; at most " +
                              std::to_string(kMaxConstraints) + " are allowed",
                          q_line + 1};
  }
  return plan;
}

std::vector<std::string> validate_edit_plan(const EditPlan& plan) {
  std::vector<std::string> warnings;
  const std::size_t words = word_count(plan.instruction);
  if (words >= 15) {
    warnings.push_back("instruction has " + std::to_string(words) + " words; the guideline is fewer than 15");
  }
  const bool any_dynamic = std::any_of(plan.constraints.begin(), plan.constraints.end(),
                                       [](const QAConstraint& c) { return c.kind == ConstraintKind::dynamic_fact; });
  if (!any_dynamic) {
    warnings.push_back("no question refers to what the instruction changes");
  }
  const bool any_yes = std::any_of(plan.constraints.begin(), plan.constraints.end(),
                                   [](const QAConstraint& c) { return c.expected == Answer::yes; });
  const bool any_no = std::any_of(plan.constraints.begin(), plan.constraints.end(),
                                  [](const QAConstraint& c) { return c.expected == Answer::no; });
  if (!(any_yes && any_no)) {
    warnings.push_back("all questions expect the same answer; no removed/added fact pair");
  }
  const auto n = static_cast<long>(plan.constraints.size());
  if (n < 5 - 3 || n > 5 + 3) {
    warnings.push_back("plan has " + std::to_string(n) + " questions; expected about 5");
  }
  return warnings;
}

}  // namespace sp::planner
