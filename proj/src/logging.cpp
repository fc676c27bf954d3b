#include "dsa/logging.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace dsa {

namespace {

LogLevel parse_level() {
    const char* raw = std::getenv("DSA_LOG");
    if (!raw) return LogLevel::kInfo;
    const std::string v(raw);
    if (v == "quiet" || v == "0") return LogLevel::kQuiet;
    if (v == "debug" || v == "2") return LogLevel::kDebug;
    return LogLevel::kInfo;
}

}  // namespace

LogLevel log_level() {
    static const LogLevel level = parse_level();
    return level;
}

void log_info(const std::string& message) {
    if (log_level() >= LogLevel::kInfo) std::cerr << message << "\n";
}

void log_debug(const std::string& message) {
    if (log_level() >= LogLevel::kDebug) std::cerr << message << "\n";
}

}  // namespace dsa
