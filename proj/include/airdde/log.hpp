#pragma once

#include <string>

namespace airdde::log {

enum class Level { quiet = 0, error = 1, info = 2, debug = 3 };

/// Read once from AIRDDE_LOG (quiet|error|info|debug); defaults to info.
Level level();
void set_level(Level level);

void error(const std::string& message);
void info(const std::string& message);
void debug(const std::string& message);

}  // namespace airdde::log
