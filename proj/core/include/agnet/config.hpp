#pragma once

#include <agnet/error.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace agnet {

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

/// Every accepted key, in canonical (echo) order.
const std::vector<ConfigKey> &config_keys();

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Line-oriented `key = value` run configuration. Unknown keys are rejected.
class RunConfig {
public:
    RunConfig();

    static RunConfig parse(std::string_view text);
    static RunConfig load(const std::filesystem::path &path);

    void set(const std::string &key, const std::string &value);
    const std::string &get(const std::string &key) const;
    int get_int(const std::string &key) const;
    uint64_t get_u64(const std::string &key) const;
    double get_double(const std::string &key) const;
    bool get_bool(const std::string &key) const;

    /// Canonical echo: every key in config_keys() order.
    std::string dump() const;
    void save(const std::filesystem::path &path) const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace agnet
