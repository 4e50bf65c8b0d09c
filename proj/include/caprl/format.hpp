#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace caprl {

/// Shortest decimal form that round-trips; "nan" / "inf" / "-inf" otherwise.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return std::to_string(v);
    return std::string(buf, end);
}

}  // namespace caprl
