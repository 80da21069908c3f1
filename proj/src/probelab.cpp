#include "safetypairs/probelab.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "safetypairs/codec.hpp"
#include "safetypairs/metrics.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace sp::probe {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::string_view> tags) {
  std::vector<std::string_view> parts;
  const std::string b = std::to_string(base);
  parts.push_back(b);
  parts.insert(parts.end(), tags.begin(), tags.end());
  std::string joined;
  for (auto p : parts) {
    joined.append(p);
    joined.push_back('\x1f');
  }
  return std::stoull(sha256_hex(joined).substr(0, 16), nullptr, 16);
}

// Fisher-Yates on raw engine output keeps shuffles identical across
// standard library implementations.
template <typename T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng() % i]);
  }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double gaussian(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
}

}  // namespace

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw PreconditionError("cosine_similarity: lengths " + std::to_string(u.size()) + " and " +
                            std::to_string(v.size()));
  }
  const double nu = norm(u), nv = norm(v);
  if (nu == 0 || nv == 0) throw PreconditionError("cosine_similarity: zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

void EmbeddingSet::add(const std::string& key, std::span<const double> v) {
  if (v.size() != dim_) {
    throw DimensionError("embedding '" + key + "' has dimension " + std::to_string(v.size()) + ", expected " +
                         std::to_string(dim_));
  }
  const double n = norm(v);
  if (!(n > 0) || !std::isfinite(n)) throw PreconditionError("embedding '" + key + "' is zero or non-finite");
  if (contains(key)) throw DuplicateError("embedding '" + key + "' added twice");
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  vectors_.emplace(key, std::move(out));
}

const Vec& EmbeddingSet::at(const std::string& key) const {
  auto it = vectors_.find(key);
  if (it == vectors_.end()) throw NotFoundError("no embedding for image '" + key + "'");
  return it->second;
}

void to_json(json& j, const ProbeDataset& d) {
  json items = json::array();
  for (const auto& it : d.items) {
    items.push_back({{"key", it.key}, {"label", to_string(it.label)}, {"policy_id", it.policy_id}});
  }
  j = json{{"items", std::move(items)}, {"counterparts", d.counterparts}};
}

void from_json(const json& j, ProbeDataset& d) {
  d = {};
  std::set<std::string> seen;
  for (const auto& it : j.at("items")) {
    ProbeItem item;
    item.key = it.at("key").get<std::string>();
    item.label = parse_label(it.at("label").get<std::string>());
    item.policy_id = it.at("policy_id").get<std::string>();
    if (!seen.insert(item.key).second) throw DuplicateError("dataset item '" + item.key + "' listed twice");
    d.items.push_back(std::move(item));
  }
  if (j.contains("counterparts")) {
    d.counterparts = j.at("counterparts").get<std::map<std::string, std::string>>();
  }
}

Distribution summarize(std::vector<double> values, int bins) {
  Distribution d;
  d.count = values.size();
  d.histogram.assign(static_cast<std::size_t>(bins), 0);
  if (values.empty()) return d;
  d.mean = mean_of(values);
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  d.median = values.size() % 2 ? values[mid] : (values[mid - 1] + values[mid]) / 2.0;
  for (double v : values) {
    auto b = static_cast<std::size_t>((v + 1.0) / 2.0 * bins);
    d.histogram[std::min(b, d.histogram.size() - 1)]++;
  }
  return d;
}

void to_json(json& j, const SimilarityStudy& s) {
  auto dist = [](const Distribution& d) {
    return json{{"count", d.count}, {"mean", d.mean}, {"median", d.median}, {"histogram", d.histogram}};
  };
  json pairs = json::array();
  for (const auto& [id, v] : s.pair_sims) pairs.push_back({{"pair_id", id}, {"cosine", v}});
  json base = json::array();
  for (const auto& [id, v] : s.baseline_sims) base.push_back({{"image", id}, {"cosine", v}});
  j = json{{"pairs", dist(s.pairs)},
           {"baseline", dist(s.baseline)},
           {"mean_difference", s.mean_difference},
           {"pair_sims", std::move(pairs)},
           {"baseline_sims", std::move(base)}};
}

SimilarityStudy pair_similarity_study(const std::vector<SafetyPair>& pairs, const std::vector<ProbeItem>& unpaired,
                                      const EmbeddingSet& embeddings) {
  SimilarityStudy s;
  std::vector<double> pv, bv;
  for (const auto& p : pairs) {
    const double c = cosine_similarity(embeddings.at(p.unsafe_hash), embeddings.at(p.safe_hash));
    s.pair_sims.emplace_back(p.pair_id, c);
    pv.push_back(c);
  }
  std::vector<const Vec*> safe;
  for (const auto& it : unpaired) {
    if (it.label == Label::safe) safe.push_back(&embeddings.at(it.key));
  }
  for (const auto& it : unpaired) {
    if (it.label != Label::unsafe) continue;
    const Vec& u = embeddings.at(it.key);
    if (safe.empty()) throw PreconditionError("similarity baseline needs at least one safe image");
    double best = -1.0;
    for (const Vec* v : safe) best = std::max(best, cosine_similarity(u, *v));
    s.baseline_sims.emplace_back(it.key, best);
    bv.push_back(best);
  }
  s.pairs = summarize(pv);
  s.baseline = summarize(bv);
  s.mean_difference = s.pairs.mean - s.baseline.mean;
  return s;
}

std::vector<SimilarityBin> error_vs_similarity(const std::vector<guard::PairOutcome>& outcomes,
                                               const std::map<std::string, double>& sims, int bins) {
  if (bins < 2) throw PreconditionError("error_vs_similarity: bins must be >= 2");
  if (outcomes.size() != sims.size()) {
    throw PreconditionError("error_vs_similarity: " + std::to_string(outcomes.size()) + " outcomes vs " +
                            std::to_string(sims.size()) + " similarities");
  }
  if (outcomes.empty()) throw PreconditionError("error_vs_similarity: no pairs");
  std::vector<std::pair<double, guard::PairClass>> rows;
  for (const auto& o : outcomes) {
    auto it = sims.find(o.pair_id);
    if (it == sims.end()) throw NotFoundError("no similarity for pair '" + o.pair_id + "'");
    rows.emplace_back(it->second, o.cls);
  }
  double lo = rows.front().first, hi = lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.first);
    hi = std::max(hi, r.first);
  }
  const double width = (hi - lo) / bins;
  std::vector<SimilarityBin> out(static_cast<std::size_t>(bins));
  std::vector<std::map<guard::PairClass, std::size_t>> counts(out.size());
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].lo = lo + width * static_cast<double>(b);
    out[b].hi = b + 1 == out.size() ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (const auto& [sim, cls] : rows) {
    std::size_t b = width > 0 ? static_cast<std::size_t>((sim - lo) / width) : 0;
    b = std::min(b, out.size() - 1);
    out[b].count++;
    counts[b][cls]++;
  }
  for (std::size_t b = 0; b < out.size(); ++b) {
    for (auto cls : {guard::PairClass::correct, guard::PairClass::both_safe, guard::PairClass::both_unsafe,
                     guard::PairClass::both_incorrect}) {
      out[b].frequency[cls] =
          out[b].count ? static_cast<double>(counts[b][cls]) / static_cast<double>(out[b].count) : 0.0;
    }
  }
  return out;
}

void to_json(json& j, const ProbeHyper& h) {
  j = json{{"learning_rate", h.learning_rate}, {"epochs", h.epochs}, {"l2_lambda", h.l2_lambda}};
}

void from_json(const json& j, ProbeHyper& h) {
  h = {};
  if (j.contains("learning_rate")) h.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("epochs")) h.epochs = j.at("epochs").get<int>();
  if (j.contains("l2_lambda")) h.l2_lambda = j.at("l2_lambda").get<double>();
  if (!(h.learning_rate > 0)) throw SchemaError("probe.hyper.learning_rate", "must be > 0");
  if (h.epochs < 0) throw SchemaError("probe.hyper.epochs", "must be >= 0");
  if (h.l2_lambda < 0) throw SchemaError("probe.hyper.l2_lambda", "must be >= 0");
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_training_input(const std::vector<Vec>& X, const std::vector<Label>& y, std::size_t d) {
  if (X.size() != y.size()) throw PreconditionError("probe: X and y differ in length");
  for (const auto& x : X) {
    if (x.size() != d) throw DimensionError("probe: inconsistent input dimension");
  }
}

}  // namespace

double probe_loss(const std::vector<Vec>& X, const std::vector<Label>& y, const Vec& w, double b, double l2_lambda) {
  check_training_input(X, y, w.size());
  double total = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double z = dot(X[i], w) + b;
    const double t = y[i] == Label::unsafe ? 1.0 : 0.0;
    // log(1 + e^z) - t z, computed without overflow.
    total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - t * z;
  }
  return total / static_cast<double>(X.size()) + 0.5 * l2_lambda * dot(w, w);
}

Vec probe_gradient(const std::vector<Vec>& X, const std::vector<Label>& y, const Vec& w, double b, double l2_lambda) {
  check_training_input(X, y, w.size());
  const std::size_t d = w.size();
  Vec g(d + 1, 0.0);
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double r = logistic(dot(X[i], w) + b) - (y[i] == Label::unsafe ? 1.0 : 0.0);
    for (std::size_t k = 0; k < d; ++k) g[k] += r * X[i][k];
    g[d] += r;
  }
  const double n = static_cast<double>(X.size());
  for (std::size_t k = 0; k < d; ++k) g[k] = g[k] / n + l2_lambda * w[k];
  g[d] /= n;
  return g;
}

ProbeModel train_probe(const std::vector<Vec>& X, const std::vector<Label>& y, const ProbeHyper& hyper,
                       std::vector<double>* loss_trace) {
  if (X.size() < 2) throw PreconditionError("train_probe: need at least 2 samples");
  const bool has_unsafe = std::count(y.begin(), y.end(), Label::unsafe) > 0;
  const bool has_safe = std::count(y.begin(), y.end(), Label::safe) > 0;
  if (!has_unsafe || !has_safe) throw PreconditionError("train_probe: both classes must be present");
  if (hyper.epochs < 0) throw PreconditionError("train_probe: epochs must be >= 0");
  const std::size_t d = X.front().size();
  check_training_input(X, y, d);

  ProbeModel m;
  m.weights.assign(d, 0.0);
  m.hyper = hyper;
  for (int e = 0; e < hyper.epochs; ++e) {
    if (loss_trace) loss_trace->push_back(probe_loss(X, y, m.weights, m.bias, hyper.l2_lambda));
    const Vec g = probe_gradient(X, y, m.weights, m.bias, hyper.l2_lambda);
    for (std::size_t k = 0; k < d; ++k) m.weights[k] -= hyper.learning_rate * g[k];
    m.bias -= hyper.learning_rate * g[d];
  }
  if (loss_trace) loss_trace->push_back(probe_loss(X, y, m.weights, m.bias, hyper.l2_lambda));
  return m;
}

double predict_probe(const ProbeModel& m, std::span<const double> x) {
  if (x.size() != m.weights.size()) {
    throw DimensionError("predict_probe: input has dimension " + std::to_string(x.size()) + ", model " +
                         std::to_string(m.weights.size()));
  }
  return logistic(dot(m.weights, x) + m.bias);
}

void to_json(json& j, const SweepConfig& c) {
  j = json{{"n_values", c.n_values}, {"folds", c.folds}, {"seed", c.seed}, {"hyper", c.hyper}};
}

void from_json(const json& j, SweepConfig& c) {
  c = {};
  if (j.contains("n_values")) c.n_values = j.at("n_values").get<std::vector<int>>();
  if (j.contains("folds")) c.folds = j.at("folds").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("hyper")) c.hyper = j.at("hyper").get<ProbeHyper>();
  if (j.contains("workers")) c.workers = j.at("workers").get<int>();
  if (c.folds < 2) throw SchemaError("probe.folds", "must be >= 2");
  if (c.n_values.empty()) throw SchemaError("probe.n_values", "must not be empty");
  for (int n : c.n_values) {
    if (n < 1) throw SchemaError("probe.n_values", "entries must be >= 1");
  }
  if (c.workers < 1) throw SchemaError("probe.workers", "must be >= 1");
}

namespace {

struct PolicyPlan {
  std::string policy_id;
  std::vector<std::string> unsafe;  // balanced, shuffled
  std::vector<std::string> safe;
  std::vector<std::vector<std::string>> test_folds;
};

struct Task {
  const PolicyPlan* plan;
  int fold;  // 0-based
};

std::vector<SweepCell> run_fold(const PolicyPlan& plan, int fold, const ProbeDataset& dataset,
                                const EmbeddingSet& emb, const SweepConfig& cfg) {
  const int k = cfg.folds;
  std::vector<std::string> train_unsafe, train_safe;
  for (std::size_t i = 0; i < plan.unsafe.size(); ++i) {
    if (static_cast<int>(i % k) != fold) train_unsafe.push_back(plan.unsafe[i]);
  }
  for (std::size_t i = 0; i < plan.safe.size(); ++i) {
    if (static_cast<int>(i % k) != fold) train_safe.push_back(plan.safe[i]);
  }
  const std::string fold_tag = std::to_string(fold + 1);
  seeded_shuffle(train_unsafe, derive_seed(cfg.seed, {"sample", plan.policy_id, fold_tag, "unsafe"}));
  seeded_shuffle(train_safe, derive_seed(cfg.seed, {"sample", plan.policy_id, fold_tag, "safe"}));

  std::vector<Vec> test_x;
  std::vector<Label> test_y;
  for (std::size_t i = static_cast<std::size_t>(fold); i < plan.unsafe.size(); i += k) {
    test_x.push_back(emb.at(plan.unsafe[i]));
    test_y.push_back(Label::unsafe);
  }
  for (std::size_t i = static_cast<std::size_t>(fold); i < plan.safe.size(); i += k) {
    test_x.push_back(emb.at(plan.safe[i]));
    test_y.push_back(Label::safe);
  }

  std::vector<SweepCell> cells;
  for (int n : cfg.n_values) {
    for (bool augmented : {false, true}) {
      std::vector<Vec> X;
      std::vector<Label> y;
      // Nested: the first n of a fixed per-fold shuffle.
      for (int i = 0; i < n; ++i) {
        X.push_back(emb.at(train_unsafe[i]));
        y.push_back(Label::unsafe);
      }
      for (int i = 0; i < n; ++i) {
        X.push_back(emb.at(train_safe[i]));
        y.push_back(Label::safe);
      }
      if (augmented) {
        for (int i = 0; i < n; ++i) {
          auto it = dataset.counterparts.find(train_unsafe[i]);
          if (it == dataset.counterparts.end()) continue;
          X.push_back(emb.at(it->second));
          y.push_back(Label::safe);
        }
      }
      const ProbeModel m = train_probe(X, y, cfg.hyper);
      std::vector<Label> preds;
      std::vector<std::pair<double, bool>> scored;
      for (std::size_t i = 0; i < test_x.size(); ++i) {
        const double p = predict_probe(m, test_x[i]);
        preds.push_back(p >= 0.5 ? Label::unsafe : Label::safe);
        scored.emplace_back(p, test_y[i] == Label::unsafe);
      }
      SweepCell cell;
      cell.policy_id = plan.policy_id;
      cell.n = n;
      cell.augmented = augmented;
      cell.fold = fold + 1;
      cell.train_size = static_cast<int>(X.size());
      cell.test_size = static_cast<int>(test_x.size());
      cell.f1 = metrics::prf1(metrics::confusion(preds, test_y)).f1;
      cell.auc = metrics::roc_curve(scored).auc;
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace

SweepResult sample_efficiency_sweep(const ProbeDataset& dataset, const EmbeddingSet& embeddings,
                                    const SweepConfig& cfg) {
  if (cfg.folds < 2) throw PreconditionError("sweep: folds must be >= 2");
  if (cfg.n_values.empty()) throw PreconditionError("sweep: no n values");
  SweepResult result;
  result.config = cfg;

  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> by_policy;
  for (const auto& it : dataset.items) {
    embeddings.at(it.key);
    auto& [u, s] = by_policy[it.policy_id];
    (it.label == Label::unsafe ? u : s).push_back(it.key);
  }
  for (const auto& [unsafe_key, safe_key] : dataset.counterparts) embeddings.at(safe_key);
  if (by_policy.empty()) throw PreconditionError("sweep: empty dataset");

  const int max_n = *std::max_element(cfg.n_values.begin(), cfg.n_values.end());
  std::vector<PolicyPlan> plans;
  for (auto& [policy, lists] : by_policy) {
    auto& [unsafe, safe] = lists;
    BalanceRecord bal{unsafe.size(), safe.size(), std::min(unsafe.size(), safe.size())};
    seeded_shuffle(unsafe, derive_seed(cfg.seed, {"balance", policy, "unsafe"}));
    seeded_shuffle(safe, derive_seed(cfg.seed, {"balance", policy, "safe"}));
    unsafe.resize(bal.per_class);
    safe.resize(bal.per_class);
    if (bal.per_class < static_cast<std::size_t>(cfg.folds)) {
      throw PreconditionError("sweep: policy " + policy + " has " + std::to_string(bal.per_class) +
                              " items per class, fewer than " + std::to_string(cfg.folds) + " folds");
    }
    // The smallest training side has per_class - ceil(per_class / folds) items.
    const std::size_t smallest_train = bal.per_class - (bal.per_class + cfg.folds - 1) / cfg.folds;
    if (static_cast<std::size_t>(max_n) > smallest_train) {
      throw PreconditionError("sweep: n=" + std::to_string(max_n) + " exceeds the " +
                              std::to_string(smallest_train) + " training samples per class available for policy " +
                              policy);
    }
    // Fold assignment: a seeded shuffle then round-robin, stratified by class.
    PolicyPlan plan{policy, unsafe, safe, {}};
    seeded_shuffle(plan.unsafe, derive_seed(cfg.seed, {"folds", policy, "unsafe"}));
    seeded_shuffle(plan.safe, derive_seed(cfg.seed, {"folds", policy, "safe"}));
    plan.test_folds.resize(static_cast<std::size_t>(cfg.folds));
    for (std::size_t i = 0; i < plan.unsafe.size(); ++i) plan.test_folds[i % cfg.folds].push_back(plan.unsafe[i]);
    for (std::size_t i = 0; i < plan.safe.size(); ++i) plan.test_folds[i % cfg.folds].push_back(plan.safe[i]);
    result.balance[policy] = bal;
    result.folds[policy] = plan.test_folds;
    plans.push_back(std::move(plan));
  }

  std::vector<Task> tasks;
  for (const auto& plan : plans) {
    for (int f = 0; f < cfg.folds; ++f) tasks.push_back({&plan, f});
  }
  std::vector<std::vector<SweepCell>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        slots[i] = run_fold(*tasks[i].plan, tasks[i].fold, dataset, embeddings, cfg);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int i = 0; i < std::max(1, cfg.workers); ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  for (auto& s : slots) result.cells.insert(result.cells.end(), s.begin(), s.end());
  std::stable_sort(result.cells.begin(), result.cells.end(), [](const SweepCell& a, const SweepCell& b) {
    return std::tie(a.policy_id, a.n, a.augmented, a.fold) < std::tie(b.policy_id, b.n, b.augmented, b.fold);
  });

  for (std::size_t i = 0; i < result.cells.size();) {
    const auto& head = result.cells[i];
    SweepSummary row{head.policy_id, head.n, head.augmented};
    std::vector<double> f1s, aucs;
    for (; i < result.cells.size() && result.cells[i].policy_id == row.policy_id && result.cells[i].n == row.n &&
           result.cells[i].augmented == row.augmented;
         ++i) {
      f1s.push_back(result.cells[i].f1);
      aucs.push_back(result.cells[i].auc);
    }
    row.f1_mean = mean_of(f1s);
    row.f1_stderr = stderr_of(f1s);
    row.auc_mean = mean_of(aucs);
    row.auc_stderr = stderr_of(aucs);
    result.summary.push_back(row);
  }
  return result;
}

void to_json(json& j, const SweepResult& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"policy_id", c.policy_id},
                     {"n", c.n},
                     {"arm", c.augmented ? "augmented" : "base"},
                     {"fold", c.fold},
                     {"train_size", c.train_size},
                     {"test_size", c.test_size},
                     {"f1", c.f1},
                     {"auc", c.auc}});
  }
  json summary = json::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"policy_id", s.policy_id},
                       {"n", s.n},
                       {"arm", s.augmented ? "augmented" : "base"},
                       {"f1_mean", s.f1_mean},
                       {"f1_stderr", s.f1_stderr},
                       {"auc_mean", s.auc_mean},
                       {"auc_stderr", s.auc_stderr}});
  }
  json balance = json::object();
  for (const auto& [p, b] : r.balance) {
    balance[p] = {{"unsafe_before", b.unsafe_before}, {"safe_before", b.safe_before}, {"per_class", b.per_class}};
  }
  j = json{{"config", r.config},
           {"normalization", "l2"},
           {"balance", std::move(balance)},
           {"folds", r.folds},
           {"cells", std::move(cells)},
           {"summary", std::move(summary)}};
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream out;
  out << "policy_id,n,arm,fold,train_size,test_size,f1,auc\n";
  char buf[64];
  for (const auto& c : r.cells) {
    out << c.policy_id << ',' << c.n << ',' << (c.augmented ? "augmented" : "base") << ',' << c.fold << ','
        << c.train_size << ',' << c.test_size << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", c.f1, c.auc);
    out << buf << '\n';
  }
  return out.str();
}

namespace {

fs::path sidecar_path(const fs::path& path) {
  fs::path p = path;
  p += ".json";
  return p;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_embedding_cache(const fs::path& path, std::size_t dim, const std::map<std::string, Vec>& rows) {
  std::string blob;
  json index = json::object();
  for (const auto& [key, v] : rows) {
    if (v.size() != dim) throw DimensionError("embedding '" + key + "' has the wrong dimension");
    index[key] = blob.size();
    for (double x : v) {
      const float f = static_cast<float>(x);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      bits = to_le(bits);
      blob.append(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  write_file_atomic(path, blob);
  write_file_atomic(sidecar_path(path), json{{"d", dim}, {"index", index}}.dump(2) + "\n");
}

std::map<std::string, Vec> load_embedding_cache(const fs::path& path, std::size_t* dim) {
  const json side = json::parse(read_file(sidecar_path(path)));
  const std::string blob = read_file(path);
  const auto d = side.at("d").get<std::size_t>();
  if (d == 0) throw SchemaError("d", "embedding dimension must be positive");
  std::map<std::string, Vec> rows;
  for (const auto& [key, off] : side.at("index").items()) {
    const auto offset = off.get<std::size_t>();
    if (offset % 4 != 0 || offset + 4 * d > blob.size()) {
      throw IntegrityError("embedding '" + key + "' points outside " + path.string());
    }
    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
      bits = to_le(bits);
      float f;
      std::memcpy(&f, &bits, 4);
      v[i] = f;
    }
    rows.emplace(key, std::move(v));
  }
  if (dim) *dim = d;
  return rows;
}

EmbeddingSet load_embedding_set(const fs::path& path) {
  std::size_t d = 0;
  auto rows = load_embedding_cache(path, &d);
  EmbeddingSet set(d);
  for (const auto& [key, v] : rows) set.add(key, v);
  return set;
}

SyntheticFixture make_synthetic_fixture(std::uint64_t seed, std::size_t points, std::size_t dim,
                                        const std::string& policy_id) {
  if (points < 2 || points % 2) throw PreconditionError("synthetic fixture needs an even number of points >= 2");
  if (dim < 2) throw PreconditionError("synthetic fixture needs dim >= 2");
  SyntheticFixture fx;
  fx.dim = dim;
  std::mt19937_64 rng(seed);
  auto key_for = [&](const char* kind, std::size_t i) { return sha256_hex(std::string(kind) + std::to_string(i)); };
  for (std::size_t i = 0; i < points; ++i) {
    const bool unsafe = i < points / 2;
    Vec v(dim);
    v[0] = (unsafe ? 0.5 : -0.5) + 0.5 * gaussian(rng);
    for (std::size_t k = 1; k < dim; ++k) v[k] = gaussian(rng);
    const std::string key = key_for("base", i);
    fx.dataset.items.push_back({key, unsafe ? Label::unsafe : Label::safe, policy_id});
    if (unsafe) {
      Vec mirror = v;
      mirror[0] = -mirror[0];
      const std::string ck = key_for("counterpart", i);
      fx.dataset.counterparts[key] = ck;
      fx.embeddings[ck] = std::move(mirror);
    }
    fx.embeddings[key] = std::move(v);
  }
  return fx;
}

}  // namespace sp::probe
