#include "safetypairs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sp::metrics {

ConfusionMatrix confusion(const std::vector<Label>& preds, const std::vector<Label>& truths) {
  if (preds.size() != truths.size()) {
    throw PreconditionError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(truths.size()) + " truths");
  }
  if (preds.empty()) throw PreconditionError("confusion: empty input");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == Label::unsafe;
    const bool t = truths[i] == Label::unsafe;
    if (p && t) ++cm.tp;
    else if (p) ++cm.fp;
    else if (t) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

Scores prf1(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.fp < 0 || cm.tn < 0 || cm.fn < 0) throw PreconditionError("prf1: negative count");
  if (cm.total() == 0) throw PreconditionError("prf1: empty confusion matrix");
  Scores s;
  s.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (cm.tp + cm.fp == 0) {
    s.precision_degenerate = true;
  } else {
    s.precision = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp);
  }
  if (cm.tp + cm.fn == 0) {
    s.recall_degenerate = true;
  } else {
    s.recall = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  }
  if (s.precision + s.recall > 0) {
    s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

RocCurve roc_curve(const std::vector<std::pair<double, bool>>& scored) {
  std::int64_t pos = 0;
  for (const auto& [score, positive] : scored) {
    if (!std::isfinite(score)) throw PreconditionError("roc: non-finite score");
    if (positive) ++pos;
  }
  const std::int64_t neg = static_cast<std::int64_t>(scored.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw PreconditionError("roc: need at least one positive and one negative example");
  }

  auto sorted = scored;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::int64_t tp = 0, fp = 0;
  double auc = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double threshold = sorted[i].first;
    std::int64_t dtp = 0, dfp = 0;
    for (; i < sorted.size() && sorted[i].first == threshold; ++i) {
      sorted[i].second ? ++dtp : ++dfp;
    }
    // Trapezoid in integer units keeps the area exact until the final division.
    auc += static_cast<double>(dfp) * (static_cast<double>(tp) + static_cast<double>(dtp) / 2.0);
    tp += dtp;
    fp += dfp;
    curve.points.push_back(
        {threshold, static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos)});
  }
  curve.auc = auc / (static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& cm) {
  j = nlohmann::json{{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
}

void to_json(nlohmann::json& j, const Scores& s) {
  j = nlohmann::json{{"accuracy", s.accuracy},
                     {"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1},
                     {"precision_degenerate", s.precision_degenerate},
                     {"recall_degenerate", s.recall_degenerate}};
}

void to_json(nlohmann::json& j, const RocPoint& p) {
  j = nlohmann::json{{"threshold", std::isinf(p.threshold) ? nlohmann::json(nullptr) : nlohmann::json(p.threshold)},
                     {"fpr", p.fpr},
                     {"tpr", p.tpr}};
}

}  // namespace sp::metrics
