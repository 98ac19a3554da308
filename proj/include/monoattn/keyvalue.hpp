// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` text files: config files and run manifests.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace monoattn {

using KeyValues = std::map<std::string, std::string>;

/// One `key = value` per line. Text after '#' is a comment, blank lines are
/// skipped, surrounding whitespace is trimmed. A repeated key keeps the last value.
/// Throws ParseError with the line number for a line without '=' or an empty key.
KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::filesystem::path& path);

/// Writes `key = value` lines in key order.
void write_key_values(const KeyValues& values, std::ostream& out);
void write_key_values(const KeyValues& values, const std::filesystem::path& path);

}  // namespace monoattn
