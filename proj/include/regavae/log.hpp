#pragma once

#include <string_view>

namespace regavae::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kQuiet = 3 };

void set_level(Level level);
Level level();

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);

}  // namespace regavae::log
