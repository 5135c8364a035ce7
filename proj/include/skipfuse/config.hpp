#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace skipfuse {

/// Flat key = value configuration. Every key has a documented default;
/// unknown keys are rejected. Lines starting with '#' are comments.
class RunConfig {
public:
    struct Entry {
        std::string key;
        std::string default_value;
        std::string help;
    };

    RunConfig();

    static const std::vector<Entry>& schema();

    static RunConfig from_file(const std::filesystem::path& path);
    /// Applies "key = value" lines; throws ConfigError on unknown keys or
    /// malformed lines. `origin` names the source in error messages.
    void merge_text(const std::string& text, const std::string& origin);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    std::string get_string(const std::string& key) const { return get(key); }
    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const;

    /// Every key with its current value, in schema order, with help comments.
    std::string dump() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace skipfuse
