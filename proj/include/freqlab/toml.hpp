#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace freqlab::toml {

/// Parses the subset of TOML used by experiment configs into a JSON object:
/// `key = value` pairs, `[table]` and `[[array of tables]]` headers, dotted
/// header names, `#` comments, and values that are basic strings, integers,
/// floats (including inf and nan), booleans or single-line arrays of those.
/// Errors name the source and line.
nlohmann::json parse(const std::string& text, const std::string& source = "config");
nlohmann::json parse_file(const std::string& path);

}  // namespace freqlab::toml
