#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "safetypairs/policy.hpp"
#include "safetypairs/store.hpp"

namespace sp::review {

/// Everything a reviewer needs to judge one VQA-passing candidate.
struct ReviewItem {
  std::string candidate_id;
  std::string source_id;
  std::string source_image_ref;
  std::string source_image_hash;
  std::string edited_image_ref;
  std::string edited_image_hash;
  std::string instruction;
  std::vector<VqaAnswer> constraint_report;
  std::string policy_id;
  std::string policy_text;
  std::string rationale;
};

void to_json(nlohmann::json& j, const ReviewItem& item);

using Clock = std::function<std::chrono::system_clock::time_point()>;

inline constexpr std::chrono::seconds kDefaultLease{600};

/// Human-validation queue over a writer store. Leases live in memory only;
/// losing them can cause duplicate review but never lost decisions.
class ReviewService {
 public:
  explicit ReviewService(Store& store, const PolicySet& policies = bundled_policies(),
                         std::chrono::seconds lease = kDefaultLease, Clock clock = {});

  /// Pending items ordered by (source_id, candidate_id), skipping items
  /// leased to someone else. Returned items are leased to `reviewer`.
  std::vector<ReviewItem> next_items(const std::string& reviewer, int limit);

  /// Records a decision as a new candidate revision. Repeating the current
  /// (verdict, reviewer) is a no-op; a different decision supersedes it.
  CandidateEdit submit_decision(const std::string& candidate_id, ReviewVerdict verdict, const std::string& reviewer,
                                std::optional<std::string> note = std::nullopt);

  YieldStats stats() const { return compute_yield_stats(store_); }
  std::vector<CandidateEdit> history(const std::string& candidate_id) const {
    return store_.candidate_history(candidate_id);
  }
  Store& store() { return store_; }

 private:
  struct Lease {
    std::string reviewer;
    std::chrono::system_clock::time_point expires;
  };

  Store& store_;
  const PolicySet& policies_;
  std::chrono::seconds lease_;
  Clock clock_;
  std::mutex mu_;
  std::map<std::string, Lease> leases_;
};

/// HTTP front end:
///   GET  /api/review/next?limit=N&reviewer=R
///   POST /api/review/decision {candidate_id, verdict, reviewer, note}
///   GET  /api/review/stats
///   GET  /api/review/history/{candidate_id}
///   GET  /api/image/{hash}
/// plus static files from `static_dir` at /.
class ReviewServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;
    std::optional<std::filesystem::path> static_dir;
    std::optional<std::string> bearer_token;
  };

  static std::unique_ptr<ReviewServer> serve(ReviewService& service, const Options& options);
  ~ReviewServer();

  int port() const { return port_; }
  std::string base_url() const;
  void stop();
  void wait();

 private:
  ReviewServer() = default;
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace sp::review
