#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alignlab {

/// Decimal with 17 significant digits; round-trips every finite double.
/// NaN is written as "nan".
std::string format_double(double value);

/// Empty string for a missing value.
std::string format_optional(const std::optional<double>& value);

std::optional<double> parse_double(std::string_view text);
std::optional<std::int64_t> parse_int(std::string_view text);

std::vector<std::string_view> split_view(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// Flat `key = value` text with `#` comments. Throws ParseError on a line
/// without '='.
std::map<std::string, std::string> parse_key_values(std::string_view text);

}  // namespace alignlab
