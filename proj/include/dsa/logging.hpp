#pragma once

#include <string>

namespace dsa {

// Verbosity is taken from the DSA_LOG environment variable once per process:
// "quiet"/"0" suppresses progress output, "info"/"1" (default) prints
// progress, "debug"/"2" adds per-step detail. Messages go to stderr.
enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level();
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace dsa
