#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stiformer/tensor.h"

namespace stif {

/// Malformed or unknown configuration input.
class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Parses "key=value" lines. Blank lines and lines starting with '#' are
/// skipped. Malformed lines raise ConfigError naming the line number.
std::vector<std::pair<std::string, std::string>> parse_kv_lines(std::string_view text);

std::size_t parse_size(const std::string& value, const std::string& key);
double parse_double(const std::string& value, const std::string& key);
std::uint64_t parse_u64(const std::string& value, const std::string& key);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace stif
