#include "ddt/kv_config.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace ddt {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues parse_kv(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = trim(line);
        if (body.empty() || body[0] == '#') {
            continue;
        }
        const auto eq = body.find('=');
        const std::string where = source + " line " + std::to_string(number);
        if (eq == std::string::npos) {
            throw std::runtime_error(where + ": expected key = value");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error(where + ": empty key");
        }
        if (!kv.emplace(key, value).second) {
            throw std::runtime_error(where + ": key '" + key + "' given twice");
        }
    }
    return kv;
}

KeyValues read_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read config " + path);
    }
    return parse_kv(in, path);
}

void write_kv(std::ostream& out, const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
        out << k << '=' << v << '\n';
    }
}

}  // namespace ddt
