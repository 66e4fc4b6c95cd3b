#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace talecraft {

/// Flat key=value configuration. Keys are dotted ("t2l.m_bins"); a `[section]`
/// header in a file prefixes the keys that follow it. Lines starting with '#'
/// are comments and values may be double-quoted.
class Config {
public:
    /// Every tunable with its default value.
    static Config defaults();

    static Config parse(const std::string& text);
    static Config load(const std::filesystem::path& path);

    /// Values present in `overrides` replace ours.
    void merge(const Config& overrides);

    bool contains(const std::string& key) const;
    void set(const std::string& key, std::string value);

    std::string get_string(const std::string& key) const;
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& entries() const noexcept { return entries_; }

    /// Serializes in sorted key order, one `key = value` per line.
    std::string to_string() const;

    bool operator==(const Config&) const = default;

private:
    const std::string& require(const std::string& key) const;
    std::map<std::string, std::string> entries_;
};

}  // namespace talecraft
