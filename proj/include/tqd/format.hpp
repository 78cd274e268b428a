#pragma once

#include <string>
#include <string_view>

namespace tqd {

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

/// Strict parse of a whole string as a double; throws ParseError on junk.
double parse_double(std::string_view text);

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view text);

}  // namespace tqd
