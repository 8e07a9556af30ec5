#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace negmine {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kBuildId = "negmine-0.1.0";

// Error taxonomy. ConfigError maps to exit code 1 at the CLI, the rest to 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Violated precondition of an operation (caller bug).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
// Non-finite values where finite ones are required; names the offending block.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Corrupt or mutually inconsistent run data (mismatched worlds, missing logs).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

inline LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("NEGMINE_LOG");
        if (!env) return LogLevel::kError;
        std::string s(env);
        if (s == "debug") return LogLevel::kDebug;
        if (s == "info") return LogLevel::kInfo;
        return LogLevel::kError;
    }();
    return lvl;
}

inline void log_error(const std::string& msg) {
    std::fprintf(stderr, "[negmine:error] %s\n", msg.c_str());
}

inline void log_warn(const std::string& msg) {
    std::fprintf(stderr, "[negmine:warn] %s\n", msg.c_str());
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::kInfo)
        std::fprintf(stderr, "[negmine:info] %s\n", msg.c_str());
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::kDebug)
        std::fprintf(stderr, "[negmine:debug] %s\n", msg.c_str());
}

// FNV-1a, used for world-file identity and mask fingerprints.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace negmine
