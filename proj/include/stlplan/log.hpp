#ifndef STLPLAN_LOG_HPP
#define STLPLAN_LOG_HPP

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace stlplan {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* e = std::getenv("STLPLAN_LOG");
    if (!e) return LogLevel::Warn;
    if (!std::strcmp(e, "error")) return LogLevel::Error;
    if (!std::strcmp(e, "warn")) return LogLevel::Warn;
    if (!std::strcmp(e, "info")) return LogLevel::Info;
    if (!std::strcmp(e, "debug")) return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return lvl;
}

template <typename... Args>
inline void log_at(LogLevel lvl, const char* tag, const char* fmt, Args... args) {
  if (lvl > log_level()) return;
  std::fprintf(stderr, "[%s] ", tag);
  if constexpr (sizeof...(Args) == 0) {
    std::fputs(fmt, stderr);
  } else {
    std::fprintf(stderr, fmt, args...);
  }
  std::fprintf(stderr, "\n");
}

#define STLPLAN_LOG_ERROR(...) ::stlplan::log_at(::stlplan::LogLevel::Error, "error", __VA_ARGS__)
#define STLPLAN_LOG_WARN(...) ::stlplan::log_at(::stlplan::LogLevel::Warn, "warn", __VA_ARGS__)
#define STLPLAN_LOG_INFO(...) ::stlplan::log_at(::stlplan::LogLevel::Info, "info", __VA_ARGS__)
#define STLPLAN_LOG_DEBUG(...) ::stlplan::log_at(::stlplan::LogLevel::Debug, "debug", __VA_ARGS__)

}  // namespace stlplan

#endif
