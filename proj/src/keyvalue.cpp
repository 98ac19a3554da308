// SPDX-License-Identifier: Apache-2.0
#include "monoattn/keyvalue.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "monoattn/error.hpp"

namespace monoattn {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + line + "'", number);
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", number);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_key_values(in);
}

void write_key_values(const KeyValues& values, std::ostream& out) {
  for (const auto& [key, value] : values) out << key << " = " << value << '\n';
}

void write_key_values(const KeyValues& values, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_key_values(values, out);
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace monoattn
