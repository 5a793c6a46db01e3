#pragma once

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>

namespace mvke::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Verbosity comes from the MVKE_LOG environment variable
/// (error|warn|info|debug, default info).
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("MVKE_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return Level::kError;
    if (v == "warn") return Level::kWarn;
    if (v == "debug") return Level::kDebug;
    return Level::kInfo;
  }();
  return level;
}

struct Sink {
  std::mutex mu;
  std::ofstream file;
};

inline Sink& sink() {
  static Sink s;
  return s;
}

/// Mirrors messages, with timestamps, into `path` (appending).
inline void set_file(const std::string& path) {
  std::lock_guard lock(sink().mu);
  sink().file = std::ofstream(path, std::ios::app);
}

inline void write(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(sink().mu);
  if (level <= threshold()) std::cerr << '[' << names[static_cast<int>(level)] << "] " << msg << '\n';
  if (sink().file.is_open()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
    sink().file << stamp << ' ' << names[static_cast<int>(level)] << ' ' << msg << '\n';
    sink().file.flush();
  }
}

inline void info(const std::string& msg) { write(Level::kInfo, msg); }
inline void warn(const std::string& msg) { write(Level::kWarn, msg); }
inline void debug(const std::string& msg) { write(Level::kDebug, msg); }

}  // namespace mvke::log
