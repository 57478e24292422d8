#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace gridlevels::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

/// Log threshold, initialized once from the GRIDLEVELS_LOG environment
/// variable (debug|info|warn|error|off). Default: warn.
inline Level& threshold() {
    static Level lvl = [] {
        const char* env = std::getenv("GRIDLEVELS_LOG");
        if (!env) return Level::warn;
        if (!std::strcmp(env, "debug")) return Level::debug;
        if (!std::strcmp(env, "info")) return Level::info;
        if (!std::strcmp(env, "warn")) return Level::warn;
        if (!std::strcmp(env, "error")) return Level::error;
        if (!std::strcmp(env, "off")) return Level::off;
        return Level::warn;
    }();
    return lvl;
}

inline void write(Level lvl, const std::string& msg) {
    if (lvl < threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::fprintf(stderr, "[gridlevels %s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

inline void debug(const std::string& m) { write(Level::debug, m); }
inline void info(const std::string& m) { write(Level::info, m); }
inline void warn(const std::string& m) { write(Level::warn, m); }
inline void error(const std::string& m) { write(Level::error, m); }

}  // namespace gridlevels::log
