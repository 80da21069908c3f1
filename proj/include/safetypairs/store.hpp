#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "safetypairs/common.hpp"
#include "safetypairs/jsonl.hpp"
#include "safetypairs/policy.hpp"
#include "safetypairs/records.hpp"

namespace sp {

class HashMismatchError : public IntegrityError {
 public:
  HashMismatchError(const std::string& record_id, const std::string& expected, const std::string& actual);
};

/// Another process holds the store's writer lock.
class LockError : public Error {
 public:
  using Error::Error;
};

/// Source records read from a manifest, with image refs relative to `root`.
struct SourceDataset {
  std::filesystem::path root;
  std::vector<SourceRecord> records;
};

/// Reads a line-delimited manifest of SourceRecord objects. Every image is
/// rehashed and every policy_id resolved; order follows the file.
SourceDataset load_source_dataset(const std::filesystem::path& manifest,
                                  const PolicySet& policies = bundled_policies());

enum class StoreMode { read_only, writer };
enum class ImageKind { unsafe, edited };

/// Append-only record store rooted at a directory:
///
///   sources.jsonl     source records (revisioned; caption is filled later)
///   trials.jsonl      per-trial edit plans
///   candidates.jsonl  candidate edits (revisioned; verdicts supersede)
///   pairs.jsonl       finalized pairs (rewritten by write_pairs)
///   images/unsafe/    source images, named by content hash
///   images/edited/    edited images, named by content hash
///
/// A writer holds an exclusive advisory lock on `.lock` for its lifetime.
/// Readers load a snapshot and ignore a torn final line.
class Store {
 public:
  explicit Store(std::filesystem::path root, StoreMode mode = StoreMode::writer);
  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  const std::filesystem::path& root() const { return root_; }
  bool writable() const { return mode_ == StoreMode::writer; }

  /// Re-reads every file from disk (readers use this to catch up).
  void reload();

  /// Appends `r` as the next revision of its source_id.
  void put_source(SourceRecord r);
  std::optional<SourceRecord> find_source(const std::string& source_id) const;
  std::vector<SourceRecord> sources() const;

  /// Copies image bytes under images/<kind>/<sha256>.<ext>; returns the ref.
  std::string import_image(const Bytes& image, ImageKind kind);
  std::optional<std::filesystem::path> image_path_by_hash(const std::string& hash) const;
  std::filesystem::path resolve(const std::string& ref) const { return root_ / ref; }

  /// Appends a new candidate. Throws DuplicateError / NotFoundError.
  void append_candidate(CandidateEdit c);
  /// Appends `c` as a superseding revision of an existing candidate and
  /// returns the stored version.
  CandidateEdit supersede_candidate(CandidateEdit c);
  std::optional<CandidateEdit> find_candidate(const std::string& candidate_id) const;
  /// Latest revision of every candidate, in order of first appearance.
  std::vector<CandidateEdit> candidates() const;
  std::vector<CandidateEdit> candidates_for(const std::string& source_id) const;
  /// Every revision of one candidate, oldest first.
  std::vector<CandidateEdit> candidate_history(const std::string& candidate_id) const;

  void append_trial(TrialRecord t);
  std::vector<TrialRecord> trials_for(const std::string& source_id) const;

  void write_pairs(const std::vector<SafetyPair>& pairs);
  std::vector<SafetyPair> read_pairs() const;

  /// Referential and content checks; returns one message per problem.
  std::vector<std::string> validate() const;

  /// Called after every successful append. Used for fault injection.
  void set_after_append_hook(std::function<void()> hook);

  /// Human-readable description of the current lock holder, if any.
  static std::optional<std::string> lock_holder(const std::filesystem::path& root);

 private:
  void require_writer() const;
  void load_locked();
  void after_append();

  std::filesystem::path root_;
  StoreMode mode_;
  int lock_fd_ = -1;
  std::unique_ptr<JsonlAppender> sources_out_;
  std::unique_ptr<JsonlAppender> trials_out_;
  std::unique_ptr<JsonlAppender> candidates_out_;
  std::function<void()> hook_;

  mutable std::shared_mutex mu_;
  std::vector<std::string> source_order_;
  std::map<std::string, SourceRecord> sources_;
  std::vector<std::string> candidate_order_;
  std::map<std::string, std::vector<CandidateEdit>> candidates_;
  std::map<std::string, std::vector<TrialRecord>> trials_;
};

/// One pair per accepted candidate, ordered by (source_id, candidate_id).
std::vector<SafetyPair> finalize_pairs(const Store& store);

/// Funnel counts over the latest candidate revisions. unique_pairs counts
/// distinct (unsafe, safe) image hash combinations among accepted candidates.
YieldStats compute_yield_stats(const Store& store);

}  // namespace sp
