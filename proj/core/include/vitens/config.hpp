#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vitens {

/// Flat `key = value` file; `#` starts a comment. Later keys override
/// earlier ones.
class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<config>");
    static Config load(const std::filesystem::path& path);

    /// Rejects any key not in `allowed`.
    void check_keys(const std::vector<std::string>& allowed) const;

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::optional<std::string> get(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    /// Comma-separated list; blanks trimmed, empty items dropped.
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
};

/// Keys understood by the command-line tool.
const std::vector<std::string>& known_config_keys();

}  // namespace vitens
