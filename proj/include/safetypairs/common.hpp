#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sp {

using Bytes = std::vector<std::uint8_t>;

/// Base of every domain error raised by the library. The CLI maps these to
/// exit code 1; anything else is a bug.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A record or field does not conform to its schema.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class DuplicateError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

std::string read_file(const std::filesystem::path& path);
Bytes read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const Bytes& data);

/// Writes to a sibling temporary file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// UTC wall-clock time as ISO-8601 with millisecond precision.
std::string utc_now_iso8601();

/// UTC wall-clock time formatted for use in file names (no colons).
std::string utc_now_compact();

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace sp
