#include "regavae/log.hpp"

#include <atomic>
#include <iostream>

namespace regavae::log {
namespace {

std::atomic<Level> g_level{Level::kInfo};

void emit(Level at, std::string_view tag, std::string_view message) {
  if (at < g_level.load()) return;
  std::cerr << '[' << tag << "] " << message << '\n';
}

}  // namespace

void set_level(Level level) { g_level.store(level); }
Level level() { return g_level.load(); }

void debug(std::string_view message) { emit(Level::kDebug, "debug", message); }
void info(std::string_view message) { emit(Level::kInfo, "info", message); }
void warn(std::string_view message) { emit(Level::kWarn, "warn", message); }

}  // namespace regavae::log
