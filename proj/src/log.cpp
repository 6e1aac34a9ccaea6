#include "airdde/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace airdde::log {

namespace {

Level from_env() {
  const char* v = std::getenv("AIRDDE_LOG");
  if (!v) return Level::info;
  const std::string s(v);
  if (s == "quiet") return Level::quiet;
  if (s == "error") return Level::error;
  if (s == "debug") return Level::debug;
  return Level::info;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

void emit(Level at, const char* tag, const std::string& message) {
  if (static_cast<int>(at) > current().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << "[" << tag << "] " << message << '\n';
}

}  // namespace

Level level() { return static_cast<Level>(current().load()); }
void set_level(Level l) { current() = static_cast<int>(l); }

void error(const std::string& message) { emit(Level::error, "error", message); }
void info(const std::string& message) { emit(Level::info, "info", message); }
void debug(const std::string& message) { emit(Level::debug, "debug", message); }

}  // namespace airdde::log
