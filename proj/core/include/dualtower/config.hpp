#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dualtower {

// UTF-8 key=value lines; '#' starts a comment line, blank lines are skipped,
// repeated keys are allowed and preserved in order.
class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::string& path);
    static KeyValueFile parse_string(std::string_view text);

    bool has(std::string_view key) const;
    // first occurrence; throws if absent
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, std::string fallback) const;
    std::vector<std::string> get_all(std::string_view key) const;

    std::uint64_t get_u64(const std::string& key) const;
    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;

    void set(std::string key, std::string value);
    void set_u64(std::string key, std::uint64_t v) { set(std::move(key), std::to_string(v)); }
    void set_double(std::string key, double v);

    std::string to_string() const;
    void write(const std::string& path) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const {
        return entries_;
    }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace dualtower
