#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "safetypairs/common.hpp"
#include "safetypairs/records.hpp"

namespace sp::metrics {

// Unsafe is the positive class throughout.
struct ConfusionMatrix {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(const std::vector<Label>& preds, const std::vector<Label>& truths);

struct Scores {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool precision_degenerate = false;  // tp + fp == 0
  bool recall_degenerate = false;     // tp + fn == 0
};

Scores prf1(const ConfusionMatrix& cm);

struct RocPoint {
  double threshold;
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
  double auc = 0;
};

/// `scored` holds (score, is_positive). Equal scores form one sweep step.
RocCurve roc_curve(const std::vector<std::pair<double, bool>>& scored);

void to_json(nlohmann::json& j, const ConfusionMatrix& cm);
void to_json(nlohmann::json& j, const Scores& s);
void to_json(nlohmann::json& j, const RocPoint& p);

}  // namespace sp::metrics
