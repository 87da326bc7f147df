#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace latt {

/// Structured text configuration: one `key = value` per line, nesting by
/// dotted keys, `#` comments. Parsed configs serialize back to a canonical
/// form that reparses to the same entries.
class Config {
public:
    static Config parse(const std::string& text);
    static Config parse_file(const std::filesystem::path& path);

    std::string serialize() const;

    bool has(const std::string& key) const;
    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// Insert-or-update; insertion order is preserved.
    void set(const std::string& key, const std::string& value);

    bool operator==(const Config& other) const { return entries_ == other.entries_; }

private:
    std::optional<std::string> find(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace latt
