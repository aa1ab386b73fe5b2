#include "vitens/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vitens {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

void Config::check_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [key, value] : values_) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw std::invalid_argument(origin_ + ": unknown key '" + key + "'");
        }
    }
}

std::optional<std::string> Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v->size()) throw std::invalid_argument(origin_ + ": '" + key + "' is not a number");
    return out;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::size_t used = 0;
    unsigned long long out = 0;
    try {
        if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
        out = std::stoull(*v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v->size()) {
        throw std::invalid_argument(origin_ + ": '" + key + "' is not a nonnegative integer");
    }
    return out;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

std::vector<std::string> Config::get_list(const std::string& key) const {
    std::vector<std::string> out;
    auto v = get(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {"model",    "image_size", "lr",        "weight_decay",
                                                  "batch_size", "epochs",   "patience",  "factor",
                                                  "min_delta", "exclude_classes", "seed"};
    return keys;
}

}  // namespace vitens
