#pragma once

#include <sstream>
#include <string>

namespace compliant::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

/// Threshold read once from COMPLIANT_LOG (error|warn|info|debug); warn by
/// default.
Level threshold();
void set_threshold(Level level);
bool enabled(Level level);
void write(Level level, const std::string& message);

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (!enabled(level)) return;
  std::ostringstream os;
  (os << ... << args);
  write(level, os.str());
}

template <typename... Args>
void error(const Args&... args) { emit(Level::error, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::warn, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::info, args...); }
template <typename... Args>
void debug(const Args&... args) { emit(Level::debug, args...); }

}  // namespace compliant::log
