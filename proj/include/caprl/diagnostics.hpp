#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace caprl {

/// Receives non-fatal warnings (duplicate ids, skipped lines, ...).
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink stderr_warnings() {
    return [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
}

inline WarningSink ignore_warnings() {
    return [](const std::string&) {};
}

inline void warn(const WarningSink& sink, const std::string& msg) {
    if (sink) sink(msg);
}

}  // namespace caprl
