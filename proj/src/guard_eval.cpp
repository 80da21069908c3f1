#include "safetypairs/guard_eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

#include "safetypairs/codec.hpp"
#include "safetypairs/prompt_assets.hpp"

using nlohmann::json;

namespace sp::guard {

std::string build_guard_prompt(const SafetyPolicy& policy) {
  std::string rendered = render_policy(policy);
  if (!rendered.empty() && rendered.back() == '\n') rendered.pop_back();
  std::string out(assets::kGuardV1);
  const std::string key = "{policy}";
  auto pos = out.find(key);
  out.replace(pos, key.size(), rendered);
  return out;
}

double normalize_logits(const GuardLogits& logits) {
  if (!std::isfinite(logits.logit_yes) || !std::isfinite(logits.logit_no)) {
    throw PreconditionError("guard logits must be finite");
  }
  const double d = logits.logit_yes - logits.logit_no;
  // Evaluate on the side that cannot overflow.
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

Label threshold_label(double p_unsafe, double threshold) { return p_unsafe >= threshold ? Label::unsafe : Label::safe; }

GuardClassifier::GuardClassifier(std::shared_ptr<ModelClient> gateway) : gateway_(std::move(gateway)) {
  if (!gateway_) throw PreconditionError("guard classifier needs a gateway");
  if (gateway_->config().role != Role::guard) {
    throw PreconditionError("endpoint '" + gateway_->config().name + "' is not a guard endpoint");
  }
}

const std::string& GuardClassifier::endpoint() const { return gateway_->config().name; }

bool GuardClassifier::uses_logits() const { return gateway_->config().logits; }

std::size_t GuardClassifier::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

GuardPrediction GuardClassifier::classify_image(const SafetyPolicy& policy, const Bytes& image,
                                                const std::string& image_ref, double threshold) {
  GuardPrediction pred;
  pred.image_ref = image_ref;
  pred.image_hash = sha256_hex(image);
  pred.policy_id = policy.id;
  pred.threshold = threshold;
  const auto key = std::make_tuple(pred.image_hash, policy.id, endpoint());

  std::optional<Cached> hit;
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) hit = it->second;
  }
  if (!hit) {
    const std::string prompt = build_guard_prompt(policy);
    Cached fresh{};
    if (uses_logits()) {
      fresh = {normalize_logits(gateway_->guard_logits(image, prompt)), true};
    } else {
      const std::string raw = gateway_->guard_text(image, prompt);
      auto ans = parse_yes_no(raw);
      if (!ans) throw VqaParseError(raw);
      fresh = {*ans == Answer::yes ? 1.0 : 0.0, false};
    }
    std::lock_guard lock(mu_);
    hit = cache_.emplace(key, fresh).first->second;
  }
  pred.p_unsafe = hit->p_unsafe;
  pred.from_logits = hit->from_logits;
  pred.label = threshold_label(pred.p_unsafe, threshold);
  return pred;
}

const char* to_string(PairClass c) {
  switch (c) {
    case PairClass::correct: return "correct";
    case PairClass::both_safe: return "both_safe";
    case PairClass::both_unsafe: return "both_unsafe";
    case PairClass::both_incorrect: return "both_incorrect";
  }
  return "?";
}

PairClass classify_pair(Label unsafe_pred, Label safe_pred) {
  if (unsafe_pred == Label::unsafe) {
    return safe_pred == Label::safe ? PairClass::correct : PairClass::both_unsafe;
  }
  return safe_pred == Label::safe ? PairClass::both_safe : PairClass::both_incorrect;
}

void PairCounts::add(PairClass c) {
  switch (c) {
    case PairClass::correct: ++correct; break;
    case PairClass::both_safe: ++both_safe; break;
    case PairClass::both_unsafe: ++both_unsafe; break;
    case PairClass::both_incorrect: ++both_incorrect; break;
  }
}

void to_json(json& j, const PairCounts& c) {
  j = json{{"correct", c.correct},
           {"both_safe", c.both_safe},
           {"both_unsafe", c.both_unsafe},
           {"both_incorrect", c.both_incorrect}};
}

namespace {

struct Accumulator {
  std::vector<Label> preds;
  std::vector<Label> truths;
  std::vector<std::pair<double, bool>> scored;
  PairCounts counts;

  Breakdown finish(bool with_auc) const {
    Breakdown b;
    b.n_images = static_cast<std::int64_t>(preds.size());
    b.confusion = metrics::confusion(preds, truths);
    b.scores = metrics::prf1(b.confusion);
    if (with_auc) b.auc = metrics::roc_curve(scored).auc;
    b.pair_counts = counts;
    return b;
  }
};

const GuardPrediction& lookup(const PredictionLookup& preds, const std::string& hash, const std::string& ref) {
  auto it = preds.find(hash);
  if (it == preds.end()) {
    throw NotFoundError("no guard prediction for image '" + ref + "' (" + hash + ")");
  }
  return it->second;
}

json breakdown_json(const Breakdown& b) {
  json j{{"n_images", b.n_images},
         {"accuracy", b.scores.accuracy},
         {"precision", b.scores.precision},
         {"recall", b.scores.recall},
         {"f1", b.scores.f1},
         {"precision_degenerate", b.scores.precision_degenerate},
         {"recall_degenerate", b.scores.recall_degenerate},
         {"confusion", b.confusion},
         {"auc", b.auc ? json(*b.auc) : json(nullptr)},
         {"pair_counts", b.pair_counts}};
  return j;
}

}  // namespace

EvalReport evaluate_pairs(const std::vector<SafetyPair>& pairs, const PredictionLookup& preds,
                          const std::string& endpoint, double threshold) {
  if (pairs.empty()) throw PreconditionError("evaluate_pairs: no pairs");
  EvalReport report;
  report.endpoint = endpoint;
  report.threshold = threshold;

  Accumulator all;
  std::map<std::string, Accumulator> by_policy;
  bool logits_everywhere = true;
  for (const auto& pair : pairs) {
    const auto& u = lookup(preds, pair.unsafe_hash, pair.unsafe_ref);
    const auto& s = lookup(preds, pair.safe_hash, pair.safe_ref);
    logits_everywhere = logits_everywhere && u.from_logits && s.from_logits;
    const Label ul = threshold_label(u.p_unsafe, threshold);
    const Label sl = threshold_label(s.p_unsafe, threshold);
    const PairClass cls = classify_pair(ul, sl);
    report.outcomes.push_back({pair.pair_id, pair.policy_id, cls});
    for (Accumulator* acc : {&all, &by_policy[pair.policy_id]}) {
      acc->preds.push_back(ul);
      acc->truths.push_back(Label::unsafe);
      acc->scored.emplace_back(u.p_unsafe, true);
      acc->preds.push_back(sl);
      acc->truths.push_back(Label::safe);
      acc->scored.emplace_back(s.p_unsafe, false);
      acc->counts.add(cls);
    }
  }
  report.overall = all.finish(logits_everywhere);
  if (logits_everywhere) report.roc = metrics::roc_curve(all.scored);
  for (const auto& [policy, acc] : by_policy) report.per_policy[policy] = acc.finish(logits_everywhere);
  return report;
}

void to_json(json& j, const EvalReport& r) {
  j = breakdown_json(r.overall);
  j["endpoint"] = r.endpoint;
  j["threshold"] = r.threshold;
  j["polarity"] = kPolarity;
  j["guard_template"] = kGuardTemplateVersion;
  j["roc"] = r.roc ? json(r.roc->points) : json(nullptr);
  json per = json::array();
  for (const auto& [policy, b] : r.per_policy) {
    json entry = breakdown_json(b);
    entry["policy_id"] = policy;
    per.push_back(std::move(entry));
  }
  j["per_policy"] = std::move(per);
  json outcomes = json::array();
  for (const auto& o : r.outcomes) {
    outcomes.push_back({{"pair_id", o.pair_id}, {"policy_id", o.policy_id}, {"class", to_string(o.cls)}});
  }
  j["pair_outcomes"] = std::move(outcomes);
}

metrics::RocCurve roc_analysis(const std::vector<std::pair<double, Label>>& scores) {
  std::vector<std::pair<double, bool>> scored;
  scored.reserve(scores.size());
  for (const auto& [p, label] : scores) scored.emplace_back(p, label == Label::unsafe);
  return metrics::roc_curve(scored);
}

PredictionLookup gather_predictions(const Store& store, const std::vector<SafetyPair>& pairs,
                                    GuardClassifier& classifier, const PolicySet& policies, double threshold,
                                    int workers) {
  struct Job {
    std::string hash;
    std::string ref;
    std::string policy_id;
  };
  std::vector<Job> jobs;
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    for (const auto& [hash, ref] : {std::pair{p.unsafe_hash, p.unsafe_ref}, std::pair{p.safe_hash, p.safe_ref}}) {
      if (seen.insert(hash).second) jobs.push_back({hash, ref, p.policy_id});
    }
  }

  std::vector<std::optional<GuardPrediction>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto& job = jobs[i];
        auto path = store.image_path_by_hash(job.hash);
        if (!path) throw NotFoundError("image '" + job.ref + "' is not in the store");
        results[i] = classifier.classify_image(policies.at(job.policy_id), read_bytes(*path), job.ref, threshold);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, workers); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  PredictionLookup out;
  for (auto& r : results) out.emplace(r->image_hash, std::move(*r));
  return out;
}

std::string predictions_csv(const std::vector<SafetyPair>& pairs, const PredictionLookup& preds) {
  std::ostringstream out;
  out << "pair_id,role,image_hash,policy_id,p_unsafe,label,truth\n";
  char buf[32];
  for (const auto& p : pairs) {
    for (const auto& [role, hash, ref, truth] :
         {std::tuple{"unsafe", p.unsafe_hash, p.unsafe_ref, Label::unsafe},
          std::tuple{"safe", p.safe_hash, p.safe_ref, Label::safe}}) {
      const auto& pred = lookup(preds, hash, ref);
      std::snprintf(buf, sizeof buf, "%.17g", pred.p_unsafe);
      out << p.pair_id << ',' << role << ',' << hash << ',' << p.policy_id << ',' << buf << ','
          << to_string(pred.label) << ',' << to_string(truth) << '\n';
    }
  }
  return out.str();
}

}  // namespace sp::guard
