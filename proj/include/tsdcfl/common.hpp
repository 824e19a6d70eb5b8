#pragma once

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsdcfl {

// Configuration and I/O failures map to CLI exit codes 2 and 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Domain errors.
struct InfeasibleAssignment : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularSubmatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingPartial : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IndivisibleWorkers : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TooFewSamples : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyPartition : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EnergyViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("TSDCFL_LOG");
    if (!env) return LogLevel::Error;
    std::string_view v(env);
    if (v == "debug") return LogLevel::Debug;
    if (v == "info") return LogLevel::Info;
    return LogLevel::Error;
  }();
  return level;
}

inline void log_line(LogLevel lvl, const std::string& msg) {
  if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
  const char* tag = lvl == LogLevel::Error ? "error" : lvl == LogLevel::Info ? "info" : "debug";
  std::fprintf(stderr, "[tsdcfl %s] %s\n", tag, msg.c_str());
}

inline void log_error(const std::string& msg) { log_line(LogLevel::Error, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_line(LogLevel::Debug, msg); }

// Shortest round-trip decimal form, locale-independent.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

// RFC 4180 field quoting.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace tsdcfl
