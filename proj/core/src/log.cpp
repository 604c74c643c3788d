#include "tcde/log.hpp"

#include <iostream>
#include <mutex>

namespace tcde::log {

namespace {

std::mutex g_mu;
Level g_level = Level::info;
Sink g_sink;

const char* level_name(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "?";
}

}  // namespace

void set_level(Level level) {
  std::lock_guard<std::mutex> lock(g_mu);
  g_level = level;
}

Level level() {
  std::lock_guard<std::mutex> lock(g_mu);
  return g_level;
}

void set_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(g_mu);
  g_sink = std::move(sink);
}

void write(Level level, const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mu);
  if (level < g_level) return;
  if (g_sink) {
    g_sink(level, message);
    return;
  }
  std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

}  // namespace tcde::log
