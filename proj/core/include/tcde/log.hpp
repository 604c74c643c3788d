#pragma once

#include <functional>
#include <string>

namespace tcde::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

using Sink = std::function<void(Level, const std::string&)>;

void set_level(Level level);
Level level();

// Replaces the output sink. An empty function restores the default
// (stderr). Tests install a capturing sink to assert on warnings and to
// scan for credential leakage.
void set_sink(Sink sink);

void write(Level level, const std::string& message);

inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void error(const std::string& m) { write(Level::error, m); }

}  // namespace tcde::log
