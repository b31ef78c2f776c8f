#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace ddt {

using KeyValues = std::map<std::string, std::string>;

// Plain-text `key = value` lines. Blank lines and lines starting with '#' are
// skipped; whitespace around keys and values is trimmed. A repeated key or a
// line without '=' throws std::runtime_error naming the line number.
KeyValues parse_kv(std::istream& in, const std::string& source = "config");
KeyValues read_kv_file(const std::string& path);
void write_kv(std::ostream& out, const KeyValues& kv);

}  // namespace ddt
