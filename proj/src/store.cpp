#include "safetypairs/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <mutex>
#include <set>
#include <tuple>

#include "safetypairs/codec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sp {

namespace {

constexpr const char* kSources = "sources.jsonl";
constexpr const char* kTrials = "trials.jsonl";
constexpr const char* kCandidates = "candidates.jsonl";
constexpr const char* kPairs = "pairs.jsonl";
constexpr const char* kLock = ".lock";

// Validation shared by append paths: a record must survive its own schema.
CandidateEdit checked(const CandidateEdit& c) {
  json j = c;
  return j.get<CandidateEdit>();
}

}  // namespace

HashMismatchError::HashMismatchError(const std::string& record_id, const std::string& expected,
                                     const std::string& actual)
    : IntegrityError("hash mismatch for '" + record_id + "': expected " + expected + ", actual " + actual) {}

SourceDataset load_source_dataset(const fs::path& manifest, const PolicySet& policies) {
  if (!fs::exists(manifest)) {
    throw NotFoundError("manifest '" + manifest.string() + "' does not exist");
  }
  SourceDataset ds;
  ds.root = manifest.parent_path();
  std::set<std::string> ids;
  read_jsonl(manifest, [&](const json& j, std::size_t) {
    SourceRecord r = j.get<SourceRecord>();
    if (!ids.insert(r.source_id).second) {
      throw SchemaError("source_id", "duplicate source_id '" + r.source_id + "'");
    }
    if (!policies.contains(r.policy_id)) {
      throw SchemaError("policy_id", "unknown policy_id '" + r.policy_id + "'");
    }
    ds.records.push_back(std::move(r));
  });
  for (const auto& r : ds.records) {
    fs::path p = ds.root / r.image_ref;
    if (!fs::exists(p)) {
      throw NotFoundError("image for '" + r.source_id + "' not found at '" + p.string() + "'");
    }
    std::string actual = sha256_hex(read_bytes(p));
    if (actual != r.image_hash) {
      throw HashMismatchError(r.source_id, r.image_hash, actual);
    }
  }
  return ds;
}

Store::Store(fs::path root, StoreMode mode) : root_(std::move(root)), mode_(mode) {
  if (mode_ == StoreMode::writer) {
    fs::create_directories(root_ / "images" / "unsafe");
    fs::create_directories(root_ / "images" / "edited");
    fs::path lock_path = root_ / kLock;
    lock_fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (lock_fd_ < 0) {
      throw Error("cannot open lock file '" + lock_path.string() + "'");
    }
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(lock_fd_);
      lock_fd_ = -1;
      throw LockError("store '" + root_.string() + "' is locked by " + lock_holder(root_).value_or("another writer"));
    }
    char host[256] = {0};
    ::gethostname(host, sizeof(host) - 1);
    std::string info = "pid " + std::to_string(::getpid()) + " on " + host + " since " + utc_now_iso8601() + "\n";
    if (::ftruncate(lock_fd_, 0) != 0 || ::pwrite(lock_fd_, info.data(), info.size(), 0) < 0) {
      // holder info is best effort; the flock itself is what excludes writers
    }
  } else if (!fs::is_directory(root_)) {
    throw NotFoundError("store '" + root_.string() + "' does not exist");
  }

  std::unique_lock lock(mu_);
  load_locked();
  if (mode_ == StoreMode::writer) {
    sources_out_ = std::make_unique<JsonlAppender>(root_ / kSources);
    trials_out_ = std::make_unique<JsonlAppender>(root_ / kTrials);
    candidates_out_ = std::make_unique<JsonlAppender>(root_ / kCandidates);
  }
}

Store::~Store() {
  if (lock_fd_ >= 0) {
    [[maybe_unused]] int rc = ::ftruncate(lock_fd_, 0);
    ::flock(lock_fd_, LOCK_UN);
    ::close(lock_fd_);
  }
}

std::optional<std::string> Store::lock_holder(const fs::path& root) {
  fs::path p = root / kLock;
  if (!fs::exists(p)) return std::nullopt;
  std::string s = trim(read_file(p));
  if (s.empty()) return std::nullopt;
  return s;
}

void Store::reload() {
  std::unique_lock lock(mu_);
  load_locked();
}

void Store::load_locked() {
  source_order_.clear();
  sources_.clear();
  candidate_order_.clear();
  candidates_.clear();
  trials_.clear();

  // A writer cuts a torn tail (interrupted append) so the next append starts
  // on a clean line.
  auto load = [&](const char* name, const std::function<void(const json&, std::size_t)>& fn) {
    fs::path p = root_ / name;
    if (!fs::exists(p)) return;
    std::size_t valid = read_jsonl(p, fn, true);
    if (mode_ == StoreMode::writer && valid != fs::file_size(p)) {
      fs::resize_file(p, valid);
    }
  };

  load(kSources, [&](const json& j, std::size_t) {
    SourceRecord r = j.get<SourceRecord>();
    if (!sources_.count(r.source_id)) source_order_.push_back(r.source_id);
    auto it = sources_.find(r.source_id);
    if (it == sources_.end() || it->second.revision <= r.revision) {
      sources_[r.source_id] = std::move(r);
    }
  });
  load(kTrials, [&](const json& j, std::size_t) {
    TrialRecord t = j.get<TrialRecord>();
    trials_[t.source_id].push_back(std::move(t));
  });
  load(kCandidates, [&](const json& j, std::size_t) {
    CandidateEdit c = j.get<CandidateEdit>();
    auto& hist = candidates_[c.candidate_id];
    if (hist.empty()) candidate_order_.push_back(c.candidate_id);
    hist.push_back(std::move(c));
  });
  for (auto& [id, hist] : candidates_) {
    std::stable_sort(hist.begin(), hist.end(),
                     [](const CandidateEdit& a, const CandidateEdit& b) { return a.revision < b.revision; });
  }
}

void Store::require_writer() const {
  if (mode_ != StoreMode::writer) {
    throw PreconditionError("store '" + root_.string() + "' is open read-only");
  }
}

void Store::set_after_append_hook(std::function<void()> hook) {
  std::unique_lock lock(mu_);
  hook_ = std::move(hook);
}

void Store::after_append() {
  if (hook_) hook_();
}

void Store::put_source(SourceRecord r) {
  require_writer();
  {
    std::unique_lock lock(mu_);
    auto it = sources_.find(r.source_id);
    r.revision = it == sources_.end() ? 1 : it->second.revision + 1;
    sources_out_->append(json(r));
    if (it == sources_.end()) source_order_.push_back(r.source_id);
    sources_[r.source_id] = r;
  }
  after_append();
}

std::optional<SourceRecord> Store::find_source(const std::string& source_id) const {
  std::shared_lock lock(mu_);
  auto it = sources_.find(source_id);
  if (it == sources_.end()) return std::nullopt;
  return it->second;
}

std::vector<SourceRecord> Store::sources() const {
  std::shared_lock lock(mu_);
  std::vector<SourceRecord> out;
  out.reserve(source_order_.size());
  for (const auto& id : source_order_) out.push_back(sources_.at(id));
  return out;
}

std::string Store::import_image(const Bytes& image, ImageKind kind) {
  require_writer();
  auto fmt = sniff_image(image);
  if (!fmt) {
    throw PreconditionError("image bytes are neither PNG nor JPEG");
  }
  std::string hash = sha256_hex(image);
  std::string ref = std::string("images/") + (kind == ImageKind::unsafe ? "unsafe/" : "edited/") + hash + "." +
                    image_extension(*fmt);
  fs::path p = root_ / ref;
  if (!fs::exists(p)) {
    write_bytes(p, image);
  }
  return ref;
}

std::optional<fs::path> Store::image_path_by_hash(const std::string& hash) const {
  if (hash.size() != 64 || hash.find_first_not_of("0123456789abcdef") != std::string::npos) {
    return std::nullopt;
  }
  for (const char* dir : {"unsafe", "edited"}) {
    for (const char* ext : {"png", "jpg"}) {
      fs::path p = root_ / "images" / dir / (hash + "." + ext);
      if (fs::exists(p)) return p;
    }
  }
  return std::nullopt;
}

void Store::append_candidate(CandidateEdit c) {
  require_writer();
  if (c.created_at.empty()) c.created_at = utc_now_iso8601();
  if (c.updated_at.empty()) c.updated_at = c.created_at;
  c.revision = 1;
  c = checked(c);
  {
    std::unique_lock lock(mu_);
    if (candidates_.count(c.candidate_id)) {
      throw DuplicateError("candidate '" + c.candidate_id + "' already exists");
    }
    if (!sources_.count(c.source_id)) {
      throw NotFoundError("candidate '" + c.candidate_id + "' references unknown source '" + c.source_id + "'");
    }
    candidates_out_->append(json(c));
    candidate_order_.push_back(c.candidate_id);
    candidates_[c.candidate_id].push_back(std::move(c));
  }
  after_append();
}

CandidateEdit Store::supersede_candidate(CandidateEdit c) {
  require_writer();
  {
    std::unique_lock lock(mu_);
    auto it = candidates_.find(c.candidate_id);
    if (it == candidates_.end()) {
      throw NotFoundError("unknown candidate '" + c.candidate_id + "'");
    }
    const CandidateEdit& latest = it->second.back();
    if (c.source_id != latest.source_id || c.trial_index != latest.trial_index || c.seed != latest.seed) {
      throw IntegrityError("revision of '" + c.candidate_id + "' changes its identity fields");
    }
    c.revision = latest.revision + 1;
    c.created_at = latest.created_at;
    c.updated_at = utc_now_iso8601();
    c = checked(c);
    candidates_out_->append(json(c));
    it->second.push_back(c);
  }
  after_append();
  return c;
}

std::optional<CandidateEdit> Store::find_candidate(const std::string& candidate_id) const {
  std::shared_lock lock(mu_);
  auto it = candidates_.find(candidate_id);
  if (it == candidates_.end()) return std::nullopt;
  return it->second.back();
}

std::vector<CandidateEdit> Store::candidates() const {
  std::shared_lock lock(mu_);
  std::vector<CandidateEdit> out;
  out.reserve(candidate_order_.size());
  for (const auto& id : candidate_order_) out.push_back(candidates_.at(id).back());
  return out;
}

std::vector<CandidateEdit> Store::candidates_for(const std::string& source_id) const {
  std::shared_lock lock(mu_);
  std::vector<CandidateEdit> out;
  for (const auto& id : candidate_order_) {
    const auto& c = candidates_.at(id).back();
    if (c.source_id == source_id) out.push_back(c);
  }
  return out;
}

std::vector<CandidateEdit> Store::candidate_history(const std::string& candidate_id) const {
  std::shared_lock lock(mu_);
  auto it = candidates_.find(candidate_id);
  if (it == candidates_.end()) return {};
  return it->second;
}

void Store::append_trial(TrialRecord t) {
  require_writer();
  if (t.created_at.empty()) t.created_at = utc_now_iso8601();
  {
    std::unique_lock lock(mu_);
    if (!sources_.count(t.source_id)) {
      throw NotFoundError("trial references unknown source '" + t.source_id + "'");
    }
    for (const auto& existing : trials_[t.source_id]) {
      if (existing.trial_index == t.trial_index) {
        throw DuplicateError("trial " + std::to_string(t.trial_index) + " of '" + t.source_id +
                             "' already recorded");
      }
    }
    trials_out_->append(json(t));
    trials_[t.source_id].push_back(std::move(t));
  }
  after_append();
}

std::vector<TrialRecord> Store::trials_for(const std::string& source_id) const {
  std::shared_lock lock(mu_);
  auto it = trials_.find(source_id);
  if (it == trials_.end()) return {};
  return it->second;
}

void Store::write_pairs(const std::vector<SafetyPair>& pairs) {
  require_writer();
  std::string text;
  for (const auto& p : pairs) {
    text += json(p).dump();
    text += '\n';
  }
  write_file_atomic(root_ / kPairs, text);
}

std::vector<SafetyPair> Store::read_pairs() const {
  std::vector<SafetyPair> out;
  fs::path p = root_ / kPairs;
  if (!fs::exists(p)) return out;
  read_jsonl(p, [&](const json& j, std::size_t) { out.push_back(j.get<SafetyPair>()); });
  return out;
}

std::vector<std::string> Store::validate() const {
  std::vector<std::string> problems;
  auto check_image = [&](const std::string& owner, const std::string& ref, const std::string& hash) {
    fs::path p = root_ / ref;
    if (!fs::exists(p)) {
      problems.push_back(owner + ": image '" + ref + "' is missing");
      return;
    }
    std::string actual = sha256_hex(read_bytes(p));
    if (actual != hash) {
      problems.push_back(owner + ": image '" + ref + "' hash mismatch (expected " + hash + ", actual " + actual + ")");
    }
  };

  std::shared_lock lock(mu_);
  for (const auto& id : source_order_) {
    const auto& s = sources_.at(id);
    check_image("source " + id, s.image_ref, s.image_hash);
  }
  for (const auto& id : candidate_order_) {
    const auto& hist = candidates_.at(id);
    const auto& c = hist.back();
    if (!sources_.count(c.source_id)) {
      problems.push_back("candidate " + id + ": unknown source '" + c.source_id + "'");
    }
    for (std::size_t i = 0; i < hist.size(); ++i) {
      if (hist[i].revision != static_cast<int>(i) + 1) {
        problems.push_back("candidate " + id + ": revisions are not a 1..n sequence");
        break;
      }
    }
    if (c.edited_image_ref && c.edited_image_hash) {
      check_image("candidate " + id, *c.edited_image_ref, *c.edited_image_hash);
    } else if (c.vqa_verdict == VqaVerdict::pass) {
      problems.push_back("candidate " + id + ": passed VQA without an edited image");
    }
  }
  for (const auto& [sid, trials] : trials_) {
    if (!sources_.count(sid)) {
      problems.push_back("trial of unknown source '" + sid + "'");
    }
  }
  fs::path pairs_path = root_ / kPairs;
  if (fs::exists(pairs_path)) {
    try {
      read_jsonl(pairs_path, [&](const json& j, std::size_t line) {
        SafetyPair p = j.get<SafetyPair>();
        auto it = candidates_.find(p.candidate_id);
        if (it == candidates_.end()) {
          problems.push_back("pairs.jsonl:" + std::to_string(line) + ": unknown candidate '" + p.candidate_id + "'");
        } else if (it->second.back().review_verdict != ReviewVerdict::accepted) {
          problems.push_back("pairs.jsonl:" + std::to_string(line) + ": candidate '" + p.candidate_id +
                             "' is no longer accepted");
        }
        if (p.pair_id != pair_id_for(p.candidate_id)) {
          problems.push_back("pairs.jsonl:" + std::to_string(line) + ": pair_id does not derive from candidate");
        }
      });
    } catch (const SchemaError& e) {
      problems.push_back(e.what());
    }
  }
  return problems;
}

std::vector<SafetyPair> finalize_pairs(const Store& store) {
  std::vector<CandidateEdit> accepted;
  for (auto& c : store.candidates()) {
    if (c.review_verdict == ReviewVerdict::accepted) accepted.push_back(std::move(c));
  }
  std::sort(accepted.begin(), accepted.end(), [](const CandidateEdit& a, const CandidateEdit& b) {
    return std::tie(a.source_id, a.candidate_id) < std::tie(b.source_id, b.candidate_id);
  });

  std::vector<SafetyPair> pairs;
  pairs.reserve(accepted.size());
  for (const auto& c : accepted) {
    auto src = store.find_source(c.source_id);
    if (!src) {
      throw IntegrityError("accepted candidate '" + c.candidate_id + "' references unknown source");
    }
    if (!c.edited_image_ref || !c.edited_image_hash || !fs::exists(store.resolve(*c.edited_image_ref))) {
      throw IntegrityError("accepted candidate '" + c.candidate_id + "' is missing its edited image file");
    }
    if (*c.edited_image_hash == src->image_hash) {
      throw IntegrityError("accepted candidate '" + c.candidate_id + "' is identical to its source image");
    }
    SafetyPair p;
    p.pair_id = pair_id_for(c.candidate_id);
    p.unsafe_ref = src->image_ref;
    p.unsafe_hash = src->image_hash;
    p.safe_ref = *c.edited_image_ref;
    p.safe_hash = *c.edited_image_hash;
    p.policy_id = src->policy_id;
    p.candidate_id = c.candidate_id;
    p.rationale = src->rationale;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

YieldStats compute_yield_stats(const Store& store) {
  YieldStats stats;
  std::map<std::string, std::set<std::pair<std::string, std::string>>> unique;
  std::map<std::string, std::string> policy_of;
  for (const auto& s : store.sources()) policy_of[s.source_id] = s.policy_id;

  for (const auto& c : store.candidates()) {
    auto pit = policy_of.find(c.source_id);
    const std::string policy = pit == policy_of.end() ? std::string("unknown") : pit->second;
    Funnel& per = stats.per_policy[policy];
    ++stats.total.edit_attempts;
    ++per.edit_attempts;
    if (c.vqa_verdict == VqaVerdict::pass) {
      ++stats.total.vqa_passed;
      ++per.vqa_passed;
    }
    if (c.review_verdict == ReviewVerdict::accepted) {
      ++stats.total.human_accepted;
      ++per.human_accepted;
      auto src = store.find_source(c.source_id);
      unique[policy].emplace(src ? src->image_hash : c.source_id, c.edited_image_hash.value_or(c.candidate_id));
    }
  }
  for (auto& [policy, f] : stats.per_policy) {
    f.unique_pairs = static_cast<std::int64_t>(unique[policy].size());
    stats.total.unique_pairs += f.unique_pairs;
  }
  return stats;
}

}  // namespace sp
