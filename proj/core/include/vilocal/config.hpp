#pragma once

#include <map>
#include <string>
#include <vector>

namespace vilocal {

// Sectioned key/value run configuration (INI-style). Keys are addressed as
// "section.key"; command-line overrides take precedence over file values and
// the resolved text is persisted beside every run's artifacts.
class RunConfig {
public:
    static RunConfig parse_file(const std::string& path);
    static RunConfig parse_text(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value);
    // "section.key=value" items, e.g. from --set flags
    void apply_overrides(const std::vector<std::string>& overrides);

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    std::string to_text() const;  // canonical serialization, sorted sections

private:
    std::map<std::string, std::string> values_;
};

}  // namespace vilocal
