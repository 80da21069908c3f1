#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "safetypairs/guard_eval.hpp"
#include "safetypairs/records.hpp"

namespace sp::probe {

using Vec = std::vector<double>;

/// u.v / (|u| |v|). Throws on zero vectors or length mismatch.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// Unit-normalized embeddings of fixed dimension, keyed by image hash.
class EmbeddingSet {
 public:
  explicit EmbeddingSet(std::size_t dim) : dim_(dim) {}

  /// Normalizes to unit length. Rejects zero vectors, wrong dimensions and
  /// duplicate keys.
  void add(const std::string& key, std::span<const double> v);
  bool contains(const std::string& key) const { return vectors_.count(key) != 0; }
  /// Throws NotFoundError naming the image.
  const Vec& at(const std::string& key) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  std::size_t dim_;
  std::map<std::string, Vec> vectors_;
};

struct ProbeItem {
  std::string key;
  Label label = Label::safe;
  std::string policy_id;
};

/// The labeled base dataset plus counterpart links from unsafe items to
/// the safe image of their pair. Counterparts are augmentation-only.
struct ProbeDataset {
  std::vector<ProbeItem> items;
  std::map<std::string, std::string> counterparts;
};

void to_json(nlohmann::json& j, const ProbeDataset& d);
void from_json(const nlohmann::json& j, ProbeDataset& d);

// ---- similarity analyses -------------------------------------------------

struct Distribution {
  std::size_t count = 0;
  double mean = 0;
  double median = 0;
  std::vector<std::size_t> histogram;  // equal-width bins over [-1, 1]
};

Distribution summarize(std::vector<double> values, int bins = 20);

struct SimilarityStudy {
  std::vector<std::pair<std::string, double>> pair_sims;  // (pair_id, cosine)
  std::vector<std::pair<std::string, double>> baseline_sims;  // (unsafe key, max cosine to a safe image)
  Distribution pairs;
  Distribution baseline;
  double mean_difference = 0;  // pairs.mean - baseline.mean
};

void to_json(nlohmann::json& j, const SimilarityStudy& s);

/// Baseline: for each unsafe item of `unpaired`, the highest similarity to
/// any safe item of `unpaired`.
SimilarityStudy pair_similarity_study(const std::vector<SafetyPair>& pairs, const std::vector<ProbeItem>& unpaired,
                                      const EmbeddingSet& embeddings);

struct SimilarityBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
  std::map<guard::PairClass, double> frequency;  // sums to 1 for non-empty bins
};

/// Equal-width bins over the observed similarity range. The last bin is
/// closed on the right.
std::vector<SimilarityBin> error_vs_similarity(const std::vector<guard::PairOutcome>& outcomes,
                                               const std::map<std::string, double>& sims, int bins);

// ---- linear probe ----------------------------------------------------------

struct ProbeHyper {
  double learning_rate = 0.1;
  int epochs = 500;
  double l2_lambda = 1e-4;
};

void to_json(nlohmann::json& j, const ProbeHyper& h);
void from_json(const nlohmann::json& j, ProbeHyper& h);

struct ProbeModel {
  Vec weights;
  double bias = 0;
  ProbeHyper hyper;
};

double logistic(double z);

/// Mean cross-entropy (y = 1 for unsafe) plus l2_lambda * |w|^2 / 2.
double probe_loss(const std::vector<Vec>& X, const std::vector<Label>& y, const Vec& w, double b, double l2_lambda);

/// Gradient of probe_loss; the last component is d/db.
Vec probe_gradient(const std::vector<Vec>& X, const std::vector<Label>& y, const Vec& w, double b, double l2_lambda);

/// Full-batch gradient descent from zero for exactly `hyper.epochs` steps.
/// `loss_trace`, when given, receives the loss before every step and after
/// the last one.
ProbeModel train_probe(const std::vector<Vec>& X, const std::vector<Label>& y, const ProbeHyper& hyper,
                       std::vector<double>* loss_trace = nullptr);

double predict_probe(const ProbeModel& m, std::span<const double> x);

// ---- sample-efficiency sweep ----------------------------------------------

struct SweepConfig {
  std::vector<int> n_values{2, 4, 8, 16, 32};
  int folds = 10;
  std::uint64_t seed = 0;
  ProbeHyper hyper;
  int workers = 1;
};

void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

struct SweepCell {
  std::string policy_id;
  int n = 0;
  bool augmented = false;
  int fold = 0;  // 1-based
  int train_size = 0;
  int test_size = 0;
  double f1 = 0;
  double auc = 0;
};

struct SweepSummary {
  std::string policy_id;
  int n = 0;
  bool augmented = false;
  double f1_mean = 0;
  double f1_stderr = 0;
  double auc_mean = 0;
  double auc_stderr = 0;
};

struct BalanceRecord {
  std::size_t unsafe_before = 0;
  std::size_t safe_before = 0;
  std::size_t per_class = 0;
};

struct SweepResult {
  SweepConfig config;
  std::map<std::string, BalanceRecord> balance;
  std::map<std::string, std::vector<std::vector<std::string>>> folds;  // policy -> test keys per fold
  std::vector<SweepCell> cells;  // ordered by (policy, n, arm, fold)
  std::vector<SweepSummary> summary;
};

void to_json(nlohmann::json& j, const SweepResult& r);
std::string sweep_csv(const SweepResult& r);

/// Per policy: balance classes by seeded downsampling, split into stratified
/// folds, then for every fold draw nested samples of n per class from the
/// training side. The augmented arm adds the counterparts of the sampled
/// unsafe items. Test folds only contain base items, so a pair never spans
/// train and test.
SweepResult sample_efficiency_sweep(const ProbeDataset& dataset, const EmbeddingSet& embeddings,
                                    const SweepConfig& cfg);

// ---- embedding cache -------------------------------------------------------

/// Little-endian float32 rows in `path`, index in `path` + ".json":
/// {"d": dim, "index": {key: byte offset}}.
void save_embedding_cache(const std::filesystem::path& path, std::size_t dim, const std::map<std::string, Vec>& rows);
std::map<std::string, Vec> load_embedding_cache(const std::filesystem::path& path, std::size_t* dim = nullptr);
EmbeddingSet load_embedding_set(const std::filesystem::path& path);

// ---- synthetic fixture -----------------------------------------------------

struct SyntheticFixture {
  std::map<std::string, Vec> embeddings;
  ProbeDataset dataset;
  std::size_t dim = 0;
};

/// `points` base items split evenly between classes, plus one counterpart per
/// unsafe item obtained by negating coordinate 0 (a reflection across the
/// hyperplane orthogonal to e0). Class signal lives on coordinate 0 only.
SyntheticFixture make_synthetic_fixture(std::uint64_t seed, std::size_t points = 200, std::size_t dim = 16,
                                        const std::string& policy_id = "O1");

}  // namespace sp::probe
