#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <unicode/uchar.h>
#include <unicode/utf8.h>

namespace caprl {

namespace detail {

inline void append_utf8(std::string& out, UChar32 cp) {
    char buf[U8_MAX_LENGTH];
    int32_t len = 0;
    U8_APPEND_UNSAFE(buf, len, cp);
    out.append(buf, static_cast<std::size_t>(len));
}

inline bool is_separator(UChar32 cp) {
    return u_isUWhiteSpace(cp) || u_charType(cp) == U_CONTROL_CHAR;
}

// Punctuation (P*), symbols (S*) and invisible format characters (Cf) are
// deleted in place, so "dog's" becomes "dogs" rather than two tokens.
inline bool is_removed(UChar32 cp) {
    const auto mask = U_GET_GC_MASK(cp);
    return (mask & (U_GC_P_MASK | U_GC_S_MASK | U_GC_CF_MASK)) != 0;
}

inline bool is_numeric(UChar32 cp) { return (U_GET_GC_MASK(cp) & U_GC_N_MASK) != 0; }

}  // namespace detail

/// Lowercases, strips punctuation and symbols, drops every token that
/// contains a numeric character, and splits on whitespace. Invalid UTF-8
/// sequences are treated as removed characters.
inline std::vector<std::string> clean_caption(std::string_view raw) {
    std::vector<std::string> tokens;
    std::string current;
    bool has_digit = false;

    auto flush = [&] {
        if (!current.empty() && !has_digit) tokens.push_back(current);
        current.clear();
        has_digit = false;
    };

    const auto* s = reinterpret_cast<const uint8_t*>(raw.data());
    const auto length = static_cast<int32_t>(raw.size());
    int32_t i = 0;
    while (i < length) {
        UChar32 cp = 0;
        U8_NEXT(s, i, length, cp);
        if (cp < 0) continue;
        if (detail::is_separator(cp)) {
            flush();
            continue;
        }
        if (detail::is_removed(cp)) continue;
        if (detail::is_numeric(cp)) has_digit = true;
        detail::append_utf8(current, u_tolower(cp));
    }
    flush();
    return tokens;
}

inline std::string join_words(const std::vector<std::string>& words, std::string_view sep = " ") {
    std::string out;
    for (std::size_t k = 0; k < words.size(); ++k) {
        if (k) out += sep;
        out += words[k];
    }
    return out;
}

}  // namespace caprl
