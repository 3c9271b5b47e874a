// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace megaagent::text {

std::string_view trim(std::string_view s);
/// Splits on '\n', dropping a trailing '\r' from each line. A final line
/// without a terminator is kept; an empty input yields no lines.
std::vector<std::string_view> split_lines(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string to_lower(std::string_view s);
bool contains_icase(std::string_view haystack, std::string_view needle);
bool starts_with_icase(std::string_view s, std::string_view prefix);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
/// Agent names: 1-128 chars, no whitespace, control characters or any of #/"<>.
bool is_valid_agent_name(std::string_view name);

}  // namespace megaagent::text
