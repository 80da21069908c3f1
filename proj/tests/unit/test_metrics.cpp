#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "safetypairs/metrics.hpp"

using namespace sp;
using namespace sp::metrics;

namespace {

constexpr Label U = Label::unsafe;
constexpr Label S = Label::safe;

// Pairwise rank statistic: P(score+ > score-) with ties counted half.
double auc_oracle(const std::vector<std::pair<double, bool>>& scored) {
  double wins = 0;
  double pairs = 0;
  for (const auto& [sp, pp] : scored) {
    if (!pp) continue;
    for (const auto& [sn, pn] : scored) {
      if (pn) continue;
      pairs += 1;
      wins += sp > sn ? 1.0 : sp == sn ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("confusion examples") {
  CHECK(confusion({U, U, U, S, S}, {U, U, U, S, S}) == ConfusionMatrix{3, 0, 2, 0});
  CHECK(confusion({S, S, S, S, S}, {U, U, U, S, S}) == ConfusionMatrix{0, 0, 2, 3});
  CHECK(confusion({U, U, S, U}, {U, S, S, U}) == ConfusionMatrix{2, 1, 1, 0});
  CHECK_THROWS_AS(confusion({U}, {U, S}), PreconditionError);
  CHECK_THROWS_AS(confusion({}, {}), PreconditionError);
}

TEST_CASE("prf1 examples") {
  Scores s = prf1({2, 1, 1, 0});
  CHECK(s.accuracy == doctest::Approx(0.75));
  CHECK(s.precision == doctest::Approx(2.0 / 3.0));
  CHECK(s.recall == doctest::Approx(1.0));
  CHECK(s.f1 == doctest::Approx(0.8));

  Scores perfect = prf1({3, 0, 2, 0});
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  Scores all_safe = prf1({0, 0, 2, 3});
  CHECK(all_safe.precision == 0.0);
  CHECK(all_safe.precision_degenerate);
  CHECK(all_safe.recall == 0.0);
  CHECK_FALSE(all_safe.recall_degenerate);
  CHECK(all_safe.f1 == 0.0);

  Scores no_pos = prf1({0, 1, 1, 0});
  CHECK(no_pos.recall_degenerate);
}

TEST_CASE("property: prf1 matches an independent computation") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<Label> p(n), t(n);
    for (std::size_t k = 0; k < n; ++k) {
      p[k] = rng() % 2 ? U : S;
      t[k] = rng() % 2 ? U : S;
    }
    double tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (p[k] == U) (t[k] == U ? tp : fp) += 1;
      else (t[k] == S ? tn : fn) += 1;
    }
    const double prec = tp + fp > 0 ? tp / (tp + fp) : 0;
    const double rec = tp + fn > 0 ? tp / (tp + fn) : 0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    const Scores s = prf1(confusion(p, t));
    CHECK(std::abs(s.accuracy - (tp + tn) / static_cast<double>(n)) < 1e-12);
    CHECK(std::abs(s.precision - prec) < 1e-12);
    CHECK(std::abs(s.recall - rec) < 1e-12);
    CHECK(std::abs(s.f1 - f1) < 1e-12);

    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Label> p2(n), t2(n);
    for (std::size_t k = 0; k < n; ++k) {
      p2[k] = p[idx[k]];
      t2[k] = t[idx[k]];
    }
    CHECK(confusion(p2, t2) == confusion(p, t));
  }
}

TEST_CASE("roc examples") {
  CHECK(roc_curve({{0.9, true}, {0.8, true}, {0.2, false}, {0.1, false}}).auc == doctest::Approx(1.0));
  CHECK(roc_curve({{0.9, true}, {0.4, true}, {0.6, false}, {0.1, false}}).auc == doctest::Approx(0.75));
  CHECK(roc_curve({{0.5, true}, {0.5, true}, {0.5, false}, {0.5, false}}).auc == doctest::Approx(0.5));
  CHECK_THROWS(roc_curve({{0.5, true}, {0.4, true}}));
  CHECK_THROWS(roc_curve({{NAN, true}, {0.4, false}}));

  auto c = roc_curve({{0.9, true}, {0.4, true}, {0.6, false}, {0.1, false}});
  REQUIRE(c.points.size() >= 2);
  CHECK(c.points.front().fpr == 0.0);
  CHECK(c.points.front().tpr == 0.0);
  CHECK(c.points.back().fpr == 1.0);
  CHECK(c.points.back().tpr == 1.0);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    CHECK(c.points[i].fpr >= c.points[i - 1].fpr);
    CHECK(c.points[i].tpr >= c.points[i - 1].tpr);
    CHECK(c.points[i].threshold <= c.points[i - 1].threshold);
  }
}

TEST_CASE("property: trapezoidal AUC equals the rank statistic") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<std::pair<double, bool>> scored(n);
    for (std::size_t k = 0; k < n; ++k) scored[k] = {static_cast<double>(rng() % 10) / 10.0, rng() % 2 == 0};
    scored[0].second = true;
    scored[1].second = false;
    CHECK(std::abs(roc_curve(scored).auc - auc_oracle(scored)) < 1e-12);
  }
}
