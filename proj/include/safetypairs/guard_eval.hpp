#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "safetypairs/gateway.hpp"
#include "safetypairs/metrics.hpp"
#include "safetypairs/policy.hpp"
#include "safetypairs/store.hpp"

namespace sp::guard {

inline constexpr const char* kGuardTemplateVersion = "guard_v1";
// The guard prompt asks whether the image violates the policy.
inline constexpr const char* kPolarity = "yes=unsafe";

std::string build_guard_prompt(const SafetyPolicy& policy);

/// Probability of "yes" under a softmax restricted to the yes/no tokens.
double normalize_logits(const GuardLogits& logits);

/// unsafe iff p_unsafe >= threshold.
Label threshold_label(double p_unsafe, double threshold);

struct GuardPrediction {
  std::string image_ref;
  std::string image_hash;
  std::string policy_id;
  double p_unsafe = 0.5;
  Label label = Label::safe;
  double threshold = 0.5;
  bool from_logits = true;  // false for the yes/no text fallback
};

/// Classifies images against a policy through one guard endpoint. Results are
/// cached per (image hash, policy id, endpoint name).
class GuardClassifier {
 public:
  explicit GuardClassifier(std::shared_ptr<ModelClient> gateway);

  GuardPrediction classify_image(const SafetyPolicy& policy, const Bytes& image, const std::string& image_ref,
                                 double threshold = 0.5);

  const std::string& endpoint() const;
  bool uses_logits() const;
  std::size_t cache_size() const;

 private:
  struct Cached {
    double p_unsafe;
    bool from_logits;
  };
  std::shared_ptr<ModelClient> gateway_;
  mutable std::mutex mu_;
  std::map<std::tuple<std::string, std::string, std::string>, Cached> cache_;
};

enum class PairClass { correct, both_safe, both_unsafe, both_incorrect };
const char* to_string(PairClass c);

/// Maps (prediction on the unsafe image, prediction on the safe image).
PairClass classify_pair(Label unsafe_pred, Label safe_pred);

struct PairOutcome {
  std::string pair_id;
  std::string policy_id;
  PairClass cls = PairClass::correct;
};

struct PairCounts {
  std::int64_t correct = 0;
  std::int64_t both_safe = 0;
  std::int64_t both_unsafe = 0;
  std::int64_t both_incorrect = 0;

  std::int64_t total() const { return correct + both_safe + both_unsafe + both_incorrect; }
  void add(PairClass c);
  bool operator==(const PairCounts&) const = default;
};

/// Predictions keyed by image hash.
using PredictionLookup = std::map<std::string, GuardPrediction>;

struct Breakdown {
  std::int64_t n_images = 0;
  metrics::ConfusionMatrix confusion;
  metrics::Scores scores;
  std::optional<double> auc;
  PairCounts pair_counts;
};

struct EvalReport {
  std::string endpoint;
  double threshold = 0.5;
  Breakdown overall;
  std::map<std::string, Breakdown> per_policy;
  std::vector<PairOutcome> outcomes;
  std::optional<metrics::RocCurve> roc;
};

void to_json(nlohmann::json& j, const PairCounts& c);
void to_json(nlohmann::json& j, const EvalReport& r);

/// Image-level metrics count both images of every pair, so an image shared by
/// several pairs is counted once per pair. Labels are recomputed from
/// p_unsafe at `threshold`. ROC and AUC are omitted when any
/// prediction came from the text fallback.
EvalReport evaluate_pairs(const std::vector<SafetyPair>& pairs, const PredictionLookup& preds,
                          const std::string& endpoint, double threshold);

/// Curve and AUC over (p_unsafe, truth) pairs.
metrics::RocCurve roc_analysis(const std::vector<std::pair<double, Label>>& scores);

/// Classifies every distinct (image, policy) referenced by `pairs`, using up
/// to `workers` threads.
PredictionLookup gather_predictions(const Store& store, const std::vector<SafetyPair>& pairs,
                                    GuardClassifier& classifier, const PolicySet& policies, double threshold,
                                    int workers);

/// One row per pair image: pair_id,role,image_hash,policy_id,p_unsafe,label,truth.
std::string predictions_csv(const std::vector<SafetyPair>& pairs, const PredictionLookup& preds);

}  // namespace sp::guard
