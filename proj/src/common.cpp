#include "safetypairs/common.hpp"

#include <unistd.h>

#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace sp {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open '" + path.string() + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Bytes read_bytes(const fs::path& path) {
  std::string s = read_file(path);
  return Bytes(s.begin(), s.end());
}

void write_bytes(const fs::path& path, const Bytes& data) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  static std::atomic<unsigned long> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error("cannot write '" + tmp.string() + "'");
    }
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) {
      throw Error("short write to '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

namespace {

std::string format_utc(const char* fmt, bool millis) {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, fmt);
  if (millis) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
    ss << '.' << std::setw(3) << std::setfill('0') << ms.count() << 'Z';
  }
  return ss.str();
}

}  // namespace

std::string utc_now_iso8601() { return format_utc("%Y-%m-%dT%H:%M:%S", true); }

std::string utc_now_compact() { return format_utc("%Y%m%dT%H%M%S", true); }

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace sp
