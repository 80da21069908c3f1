#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>

#include <json.hpp>

#include "safetypairs/common.hpp"

namespace sp {

/// Schema error at a specific line of a line-delimited file.
class LineError : public SchemaError {
 public:
  LineError(const std::filesystem::path& file, std::size_t line, const std::string& field, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Calls `fn(record, line_number)` for every non-blank line. Exceptions of
/// type SchemaError thrown from `fn` are rethrown as LineError.
///
/// When `tolerate_torn_tail` is set, a final line without a terminating
/// newline is treated as an interrupted append and skipped. Returns the
/// number of bytes in the valid prefix.
std::size_t read_jsonl(const std::filesystem::path& path,
                       const std::function<void(const nlohmann::json&, std::size_t)>& fn,
                       bool tolerate_torn_tail = false);

/// Append-only writer. Each record goes out as one write(2) of a complete
/// line on an O_APPEND descriptor.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);
  ~JsonlAppender();
  JsonlAppender(const JsonlAppender&) = delete;
  JsonlAppender& operator=(const JsonlAppender&) = delete;

  void append(const nlohmann::json& record);
  /// Cuts the file back to `size` bytes (used to drop a torn tail on open).
  void truncate(std::size_t size);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

}  // namespace sp
