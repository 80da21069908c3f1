#include "safetypairs/jsonl.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace sp {

LineError::LineError(const std::filesystem::path& file, std::size_t line, const std::string& field,
                     const std::string& what)
    : SchemaError(field, file.filename().string() + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::size_t read_jsonl(const std::filesystem::path& path,
                       const std::function<void(const nlohmann::json&, std::size_t)>& fn,
                       bool tolerate_torn_tail) {
  const std::string text = read_file(path);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  std::size_t valid = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', pos);
    const bool torn = nl == std::string::npos;
    std::string_view line(text.data() + pos, (torn ? text.size() : nl) - pos);
    if (torn && tolerate_torn_tail) {
      break;
    }
    if (!trim(line).empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw LineError(path, line_no, "", std::string("malformed JSON: ") + e.what());
      }
      try {
        fn(j, line_no);
      } catch (const LineError&) {
        throw;
      } catch (const SchemaError& e) {
        throw LineError(path, line_no, e.field(), e.what());
      }
    }
    pos = torn ? text.size() : nl + 1;
    valid = pos;
  }
  return valid;
}

JsonlAppender::JsonlAppender(std::filesystem::path path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error("cannot open '" + path_.string() + "' for append: " + std::strerror(errno));
  }
}

JsonlAppender::~JsonlAppender() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlAppender::append(const nlohmann::json& record) {
  std::string line = record.dump();
  line.push_back('\n');
  std::lock_guard lock(mu_);
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    ssize_t n = ::write(fd_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("append to '" + path_.string() + "' failed: " + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

void JsonlAppender::truncate(std::size_t size) {
  std::lock_guard lock(mu_);
  if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
    throw Error("cannot truncate '" + path_.string() + "': " + std::strerror(errno));
  }
}

}  // namespace sp
