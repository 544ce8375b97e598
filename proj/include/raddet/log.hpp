#pragma once

#include <string>

namespace raddet {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

// Messages go to stderr; the default threshold is warn, overridable with
// RADDET_LOG=debug|info|warn|error|off.
void set_log_level(LogLevel level);
LogLevel log_level();
void log(LogLevel level, const std::string& message);

inline void log_info(const std::string& m) { log(LogLevel::info, m); }
inline void log_warn(const std::string& m) { log(LogLevel::warn, m); }

}  // namespace raddet
