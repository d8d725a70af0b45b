#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace imt::cfg {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::string trim(std::string_view s);

/// Parses UTF-8 `key = value` lines. Blank lines and `#` comments are
/// skipped; a line without '=' is an InvalidConfig error.
KeyValues parse_key_values(std::string_view text);

}  // namespace imt::cfg
