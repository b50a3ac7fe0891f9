#include "compliant/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace compliant::log {
namespace {

Level parse_env() {
  const char* env = std::getenv("COMPLIANT_LOG");
  if (!env) return Level::warn;
  const std::string_view v(env);
  if (v == "error") return Level::error;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

std::atomic<int>& current() {
  static std::atomic<int> level{int(parse_env())};
  return level;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

Level threshold() { return Level(current().load()); }
void set_threshold(Level level) { current().store(int(level)); }
bool enabled(Level level) { return int(level) <= current().load(); }

void write(Level level, const std::string& message) {
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(sink_mutex());
  std::cerr << "[" << names[int(level)] << "] " << message << '\n';
}

}  // namespace compliant::log
