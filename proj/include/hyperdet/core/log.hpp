#pragma once

#include <cstdarg>
#include <cstdio>
#include <string>

namespace hyperdet {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline LogLevel& log_level() {
    static LogLevel level = LogLevel::info;
    return level;
}

inline LogLevel log_level_from_string(const std::string& s) {
    if (s == "debug") return LogLevel::debug;
    if (s == "info") return LogLevel::info;
    if (s == "warn") return LogLevel::warn;
    if (s == "error") return LogLevel::error;
    if (s == "off") return LogLevel::off;
    return LogLevel::info;
}

inline void vlogf(LogLevel level, const char* tag, const char* fmt, std::va_list args) {
    if (level < log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, args);
    std::fprintf(stderr, "\n");
}

#if defined(__GNUC__)
#define HYPERDET_PRINTF_ATTR __attribute__((format(printf, 1, 2)))
#else
#define HYPERDET_PRINTF_ATTR
#endif

inline void log_debug(const char* fmt, ...) HYPERDET_PRINTF_ATTR;
inline void log_info(const char* fmt, ...) HYPERDET_PRINTF_ATTR;
inline void log_warn(const char* fmt, ...) HYPERDET_PRINTF_ATTR;
inline void log_error(const char* fmt, ...) HYPERDET_PRINTF_ATTR;

inline void log_debug(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    vlogf(LogLevel::debug, "debug", fmt, args);
    va_end(args);
}

inline void log_info(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    vlogf(LogLevel::info, "info", fmt, args);
    va_end(args);
}

inline void log_warn(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    vlogf(LogLevel::warn, "warn", fmt, args);
    va_end(args);
}

inline void log_error(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    vlogf(LogLevel::error, "error", fmt, args);
    va_end(args);
}

#undef HYPERDET_PRINTF_ATTR

}  // namespace hyperdet
