#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <string>

namespace ulrl {

/// Locale-independent number formatting for CSV emission ('.' decimal point,
/// shortest round-trippable form up to 9 significant digits). NaN renders as an
/// empty field.
inline std::string csv_num(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    (void)ec;
    return std::string(buf, end);
}

inline std::string csv_num(std::size_t v) { return std::to_string(v); }
inline std::string csv_num(int v) { return std::to_string(v); }

}  // namespace ulrl
