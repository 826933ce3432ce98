// Small helpers for strict JSON config parsing.

#pragma once

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace imarl {

/// Thrown for malformed or inconsistent configuration input.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Throws ConfigError if `j` is not an object or has keys outside `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view where);

/// Reads `key` into `out` when present; type errors become ConfigError.
template <typename T>
void read_optional(const nlohmann::json& j, const char* key, T& out, std::string_view where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(where) + "." + key + ": " + e.what());
    }
}

}  // namespace imarl
