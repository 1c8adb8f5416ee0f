#include "mhg/core.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace mhg {

LogLevel log_level() {
    static const LogLevel lvl = [] {
        const char* env = std::getenv("MHG_LOG");
        if (env == nullptr) return LogLevel::info;
        const std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return lvl;
}

void log_msg(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) > static_cast<int>(log_level())) return;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::cerr << "[mhg:" << tag << "] " << msg << "\n";
}

}  // namespace mhg
