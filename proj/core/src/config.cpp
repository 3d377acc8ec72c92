#include "dualtower/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dualtower {

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

KeyValueFile KeyValueFile::parse_string(std::string_view text) {
    KeyValueFile kv;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) {
            eol = text.size();
        }
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw std::runtime_error("config line " + std::to_string(line_no) +
                                     " is not key=value: '" + std::string(line) + "'");
        }
        kv.entries_.emplace_back(std::string(line.substr(0, eq)),
                                 std::string(line.substr(eq + 1)));
        if (pos > text.size()) {
            break;
        }
    }
    return kv;
}

bool KeyValueFile::has(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return true;
        }
    }
    return false;
}

const std::string& KeyValueFile::get(const std::string& key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return v;
        }
    }
    throw std::runtime_error("missing config key: " + key);
}

std::string KeyValueFile::get_or(const std::string& key, std::string fallback) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            return v;
        }
    }
    return fallback;
}

std::vector<std::string> KeyValueFile::get_all(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            out.push_back(v);
        }
    }
    return out;
}

std::uint64_t KeyValueFile::get_u64(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(s, &used);
    if (used != s.size()) {
        throw std::runtime_error("config key " + key + " is not an integer: " + s);
    }
    return v;
}

std::uint64_t KeyValueFile::get_u64_or(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? get_u64(key) : fallback;
}

double KeyValueFile::get_double(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) {
        throw std::runtime_error("config key " + key + " is not a number: " + s);
    }
    return v;
}

double KeyValueFile::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

void KeyValueFile::set(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
}

void KeyValueFile::set_double(std::string key, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    set(std::move(key), buf);
}

std::string KeyValueFile::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

void KeyValueFile::write(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write config: " + path);
    }
    out << to_string();
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

}  // namespace dualtower
